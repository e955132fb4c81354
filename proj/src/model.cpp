#include "clopa/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "clopa/binary_io.hpp"
#include "clopa/ops.hpp"
#include "clopa/rng.hpp"

namespace clopa {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model config: " + m); };
  if (num_stages < 2) fail("num_stages must be >= 2");
  if (num_stages > 8) fail("num_stages must be <= 8");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (output_channels != 2) fail("output_channels must be 2 (background, foreground)");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd");
}

std::string_view to_string(ParamGroupMode mode) {
  switch (mode) {
    case ParamGroupMode::Frozen: return "frozen";
    case ParamGroupMode::InstanceNormOnly: return "instance_norm";
    case ParamGroupMode::InstanceNormPlusShallowConv: return "instance_norm_shallow_conv";
    case ParamGroupMode::All: return "all";
  }
  return "unknown";
}

ParamGroupMode parse_param_group_mode(std::string_view text) {
  for (auto m : {ParamGroupMode::Frozen, ParamGroupMode::InstanceNormOnly,
                 ParamGroupMode::InstanceNormPlusShallowConv, ParamGroupMode::All}) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown parameter group mode '" + std::string(text) +
                              "' (expected frozen, instance_norm, instance_norm_shallow_conv or all)");
}

bool group_trainable(ParamGroup group, ParamGroupMode mode) {
  switch (mode) {
    case ParamGroupMode::Frozen: return false;
    case ParamGroupMode::InstanceNormOnly: return group == ParamGroup::InstanceNorm;
    case ParamGroupMode::InstanceNormPlusShallowConv:
      return group == ParamGroup::InstanceNorm || group == ParamGroup::EncoderStage0Conv ||
             group == ParamGroup::DecoderLastStageConv;
    case ParamGroupMode::All: return true;
  }
  return false;
}

template <class Real>
void BasicParamStore<Real>::add(std::string name, ParamGroup group, ad::BasicTensor<Real> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  params_.push_back({std::move(name), group, std::move(value)});
}

template <class Real>
const BasicParam<Real>* BasicParamStore<Real>::find(std::string_view name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <class Real>
bool BasicParamStore<Real>::contains(std::string_view name) const {
  return find(name) != nullptr;
}

template <class Real>
const ad::BasicTensor<Real>& BasicParamStore<Real>::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw std::out_of_range("no parameter named " + std::string(name));
  return p->value;
}

template <class Real>
ad::BasicTensor<Real>& BasicParamStore<Real>::at(std::string_view name) {
  return const_cast<ad::BasicTensor<Real>&>(std::as_const(*this).at(name));
}

template <class Real>
std::int64_t BasicParamStore<Real>::total_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <class Real>
std::int64_t BasicParamStore<Real>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.requires_grad() ? p.value.numel() : 0;
  return n;
}

template <class Real>
BasicParamStore<Real> BasicParamStore<Real>::clone() const {
  BasicParamStore out(config_);
  for (const auto& p : params_) out.params_.push_back({p.name, p.group, p.value.clone()});
  return out;
}

template <class Real>
void BasicParamStore<Real>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;

namespace {

std::string stage_prefix(const char* part, int stage) { return std::string(part) + "." + std::to_string(stage); }

// Adds conv weight/bias and, when with_norm, the following instance norm.
void add_block(ParamStore& store, Rng& rng, const std::string& prefix, int cin, int cout, int k, ParamGroup conv_group,
               bool with_norm) {
  const int fan_in = cin * k * k * k;
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<float> w(static_cast<std::size_t>(cout) * fan_in);
  for (auto& v : w) v = static_cast<float>(dist(rng));
  store.add(prefix + ".conv.weight", conv_group, ad::Tensor({cout, cin, k, k, k}, std::move(w)));
  store.add(prefix + ".conv.bias", conv_group, ad::Tensor::zeros({cout}));
  if (with_norm) {
    store.add(prefix + ".norm.scale", ParamGroup::InstanceNorm, ad::Tensor::full({cout}, 1.0f));
    store.add(prefix + ".norm.bias", ParamGroup::InstanceNorm, ad::Tensor::zeros({cout}));
  }
}

int stage_channels(const ModelConfig& cfg, int stage) { return cfg.base_channels << stage; }

template <class Real>
ad::BasicTensor<Real> conv_norm_act(const BasicParamStore<Real>& s, ad::BasicTape<Real>& tape,
                                    const std::string& prefix, const ad::BasicTensor<Real>& x, int stride) {
  const int k = s.config().kernel_size;
  auto h = ad::conv3d(tape, x, s.at(prefix + ".conv.weight"), s.at(prefix + ".conv.bias"), stride, (k - 1) / 2);
  h = ad::instance_norm(tape, h, s.at(prefix + ".norm.scale"), s.at(prefix + ".norm.bias"));
  return ad::leaky_relu(tape, h);
}

}  // namespace

ParamStore build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store(cfg);
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  const int k = cfg.kernel_size;
  const int last = cfg.num_stages - 1;

  for (int s = 0; s < cfg.num_stages; ++s) {
    const auto group = s == 0 ? ParamGroup::EncoderStage0Conv : ParamGroup::Other;
    const int cin = s == 0 ? cfg.input_channels : stage_channels(cfg, s - 1);
    const int c = stage_channels(cfg, s);
    add_block(store, rng, stage_prefix("enc", s) + ".0", cin, c, k, group, true);
    add_block(store, rng, stage_prefix("enc", s) + ".1", c, c, k, group, true);
  }
  for (int s = last - 1; s >= 0; --s) {
    const auto group = s == 0 ? ParamGroup::DecoderLastStageConv : ParamGroup::Other;
    const int c = stage_channels(cfg, s);
    add_block(store, rng, stage_prefix("dec", s) + ".up", stage_channels(cfg, s + 1), c, 1, ParamGroup::Other, false);
    add_block(store, rng, stage_prefix("dec", s) + ".0", 2 * c, c, k, group, true);
    add_block(store, rng, stage_prefix("dec", s) + ".1", c, c, k, group, true);
  }
  add_block(store, rng, "head", stage_channels(cfg, 0), cfg.output_channels, 1, ParamGroup::DecoderLastStageConv,
            false);
  return store;
}

template <class Real>
void set_trainable(BasicParamStore<Real>& store, ParamGroupMode mode) {
  for (auto& p : store.params()) p.value.set_requires_grad(group_trainable(p.group, mode));
}

template <class Real>
double trainable_fraction(const BasicParamStore<Real>& store) {
  const auto total = store.total_count();
  return total == 0 ? 0.0 : static_cast<double>(store.trainable_count()) / static_cast<double>(total);
}

template <class Real>
ad::BasicTensor<Real> forward(const BasicParamStore<Real>& s, ad::BasicTape<Real>& tape,
                              const ad::BasicTensor<Real>& input) {
  const auto& cfg = s.config();
  if (input.shape().size() != 4 || input.dim(0) != cfg.input_channels) {
    throw std::invalid_argument("forward: expected input [" + std::to_string(cfg.input_channels) +
                                ",D,H,W], got " + ad::shape_to_string(input.shape()));
  }
  const int m = cfg.stride_multiple();
  for (int a = 1; a <= 3; ++a) {
    if (input.dim(a) % m != 0) {
      throw std::invalid_argument("forward: spatial extents " + ad::shape_to_string(input.shape()) +
                                  " must be divisible by " + std::to_string(m));
    }
  }

  std::vector<ad::BasicTensor<Real>> skips;
  ad::BasicTensor<Real> h = input;
  for (int st = 0; st < cfg.num_stages; ++st) {
    h = conv_norm_act(s, tape, stage_prefix("enc", st) + ".0", h, st == 0 ? 1 : 2);
    h = conv_norm_act(s, tape, stage_prefix("enc", st) + ".1", h, 1);
    skips.push_back(h);
  }
  for (int st = cfg.num_stages - 2; st >= 0; --st) {
    const auto p = stage_prefix("dec", st);
    auto u = ad::upsample_nearest2(tape, h);
    u = ad::conv3d(tape, u, s.at(p + ".up.conv.weight"), s.at(p + ".up.conv.bias"), 1, 0);
    h = ad::concat_channels(tape, u, skips[st]);
    h = conv_norm_act(s, tape, p + ".0", h, 1);
    h = conv_norm_act(s, tape, p + ".1", h, 1);
  }
  auto logits = ad::conv3d(tape, h, s.at("head.conv.weight"), s.at("head.conv.bias"), 1, 0);
  return ad::softmax_channel(tape, logits);
}

template <class To, class From>
BasicParamStore<To> convert_store(const BasicParamStore<From>& store) {
  BasicParamStore<To> out(store.config());
  for (const auto& p : store.params()) {
    std::vector<To> v(p.value.data().begin(), p.value.data().end());
    out.add(p.name, p.group, ad::BasicTensor<To>(p.value.shape(), std::move(v)));
  }
  return out;
}

template void set_trainable(BasicParamStore<float>&, ParamGroupMode);
template void set_trainable(BasicParamStore<double>&, ParamGroupMode);
template double trainable_fraction(const BasicParamStore<float>&);
template double trainable_fraction(const BasicParamStore<double>&);
template ad::BasicTensor<float> forward(const BasicParamStore<float>&, ad::BasicTape<float>&,
                                        const ad::BasicTensor<float>&);
template ad::BasicTensor<double> forward(const BasicParamStore<double>&, ad::BasicTape<double>&,
                                         const ad::BasicTensor<double>&);
template BasicParamStore<double> convert_store(const BasicParamStore<float>&);
template BasicParamStore<float> convert_store(const BasicParamStore<double>&);
template BasicParamStore<float> convert_store(const BasicParamStore<float>&);

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& os, const ParamStore& store) {
  os.write("CLPA", 4);
  io::put_u32(os, kCheckpointVersion);
  for (const auto& p : store.params()) {
    io::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::put_u8(os, static_cast<std::uint8_t>(p.group));
    io::put_u32(os, static_cast<std::uint32_t>(p.value.shape().size()));
    for (int e : p.value.shape()) io::put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : p.value.data()) io::put_f32(os, v);
  }
}

namespace {

ModelConfig infer_config(const std::vector<Param>& params) {
  ModelConfig cfg;
  int stages = 0;
  std::map<std::string, const Param*> by_name;
  for (const auto& p : params) by_name[p.name] = &p;
  while (by_name.count("enc." + std::to_string(stages) + ".0.conv.weight")) ++stages;
  const auto* first = by_name.count("enc.0.0.conv.weight") ? by_name["enc.0.0.conv.weight"] : nullptr;
  const auto* head = by_name.count("head.conv.weight") ? by_name["head.conv.weight"] : nullptr;
  if (!first || !head) throw std::runtime_error("checkpoint is missing encoder or head parameters");
  cfg.num_stages = stages;
  cfg.base_channels = first->value.dim(0);
  cfg.input_channels = first->value.dim(1);
  cfg.kernel_size = first->value.dim(2);
  cfg.output_channels = head->value.dim(0);
  cfg.validate();
  return cfg;
}

}  // namespace

ParamStore read_checkpoint(std::istream& is) {
  io::expect_magic(is, "CLPA");
  const auto version = io::get_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<Param> params;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto name_len = io::get_u32(is);
    if (name_len > 4096) throw std::runtime_error("checkpoint parameter name too long");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("unexpected end of file");
    const auto tag = io::get_u8(is);
    if (tag > static_cast<std::uint8_t>(ParamGroup::Other)) throw std::runtime_error("bad group tag in " + name);
    const auto rank = io::get_u32(is);
    if (rank == 0 || rank > 8) throw std::runtime_error("bad extent count in " + name);
    ad::Shape shape(rank);
    for (auto& e : shape) e = static_cast<int>(io::get_u32(is));
    std::vector<float> values(static_cast<std::size_t>(ad::shape_numel(shape)));
    for (auto& v : values) v = io::get_f32(is);
    params.push_back({std::move(name), static_cast<ParamGroup>(tag), ad::Tensor(std::move(shape), std::move(values))});
  }
  ParamStore store(infer_config(params));
  for (auto& p : params) store.add(std::move(p.name), p.group, std::move(p.value));
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    write_checkpoint(os, store);
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

std::string checkpoint_bytes(const ParamStore& store) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, store);
  return os.str();
}

}  // namespace clopa
