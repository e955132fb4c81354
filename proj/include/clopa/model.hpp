#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "clopa/tensor.hpp"

namespace clopa {

struct ModelConfig {
  int num_stages = 3;
  int base_channels = 8;
  int input_channels = 3;  // image + foreground prompts + background prompts
  int output_channels = 2;
  int kernel_size = 3;

  void validate() const;
  /// Spatial extents must be divisible by this.
  int stride_multiple() const { return 1 << (num_stages - 1); }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup : std::uint8_t {
  InstanceNorm = 0,
  EncoderStage0Conv = 1,
  DecoderLastStageConv = 2,
  Other = 3,
};

enum class ParamGroupMode {
  Frozen,
  InstanceNormOnly,             // CLoPA-I.N
  InstanceNormPlusShallowConv,  // CLoPA-C.N
  All,
};

std::string_view to_string(ParamGroupMode mode);
ParamGroupMode parse_param_group_mode(std::string_view text);
bool group_trainable(ParamGroup group, ParamGroupMode mode);

template <class Real>
struct BasicParam {
  std::string name;
  ParamGroup group;
  ad::BasicTensor<Real> value;
};

/// Named model parameters in a fixed construction order.
template <class Real>
class BasicParamStore {
 public:
  BasicParamStore() = default;
  explicit BasicParamStore(ModelConfig config) : config_(config) {}

  const ModelConfig& config() const { return config_; }
  const std::vector<BasicParam<Real>>& params() const { return params_; }
  std::vector<BasicParam<Real>>& params() { return params_; }

  void add(std::string name, ParamGroup group, ad::BasicTensor<Real> value);
  const ad::BasicTensor<Real>& at(std::string_view name) const;
  ad::BasicTensor<Real>& at(std::string_view name);
  bool contains(std::string_view name) const;

  std::int64_t total_count() const;
  std::int64_t trainable_count() const;

  /// Deep copy with independent storage.
  BasicParamStore clone() const;
  void zero_grad();

 private:
  const BasicParam<Real>* find(std::string_view name) const;

  ModelConfig config_;
  std::vector<BasicParam<Real>> params_;
};

using Param = BasicParam<float>;
using ParamStore = BasicParamStore<float>;

/// He-uniform convolution weights, zero biases, unit instance-norm scales.
ParamStore build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Marks exactly the parameters of the groups selected by mode as trainable.
template <class Real>
void set_trainable(BasicParamStore<Real>& store, ParamGroupMode mode);

template <class Real>
double trainable_fraction(const BasicParamStore<Real>& store);

/// Softmax probabilities [output_channels, D, H, W] for an input
/// [input_channels, D, H, W].
template <class Real>
ad::BasicTensor<Real> forward(const BasicParamStore<Real>& store, ad::BasicTape<Real>& tape,
                              const ad::BasicTensor<Real>& input);

/// Copies values (not trainable flags) across precisions.
template <class To, class From>
BasicParamStore<To> convert_store(const BasicParamStore<From>& store);

/// Checkpoint format: "CLPA", u32 version, then per parameter: u32 name
/// length, UTF-8 name, u8 group tag, u32 extent count, u32 extents, f32
/// values. All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParamStore& store);
ParamStore read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const ParamStore& store);

extern template class BasicParamStore<float>;
extern template class BasicParamStore<double>;

}  // namespace clopa
