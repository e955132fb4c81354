#include "clopa/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <random>

#include "clopa/errors.hpp"
#include "clopa/fs.hpp"
#include "clopa/rng.hpp"
#include "clopa/volume_io.hpp"
#include "json_fields.hpp"

namespace clopa {
namespace {

using Vec3 = std::array<double, 3>;

constexpr std::uint64_t kTagShape = 0x7368617065;  // "shape"
constexpr std::uint64_t kTagImage = 0x696d616765;  // "image"
constexpr std::uint64_t kTagSample = 0x73616d706c;
constexpr std::uint64_t kTagSplit = 0x73706c6974;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (;;) {
    Vec3 v{n01(rng), n01(rng), n01(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-9) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

int extent_of(const Extents& e, int axis) { return axis == 0 ? e.d : axis == 1 ? e.h : e.w; }

void stamp_ball(Mask& m, const std::array<int, 3>& c, double radius, std::int64_t& count) {
  const int r = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (dz * dz + dy * dy + dx * dx > r2) continue;
        const int z = c[0] + dz, y = c[1] + dy, x = c[2] + dx;
        if (!m.extents.contains(z, y, x)) continue;
        auto& v = m.at(z, y, x);
        if (!v) {
          v = 1;
          ++count;
        }
      }
}

// Smooth star-shaped body: voxel p belongs iff |q| <= s (1 + f(q/|q|)) with
// q the axis-scaled offset from the centre; s is set by rank so the volume
// fraction equals the drawn target exactly.
Mask make_blob(const Extents& e, const Spacing& spacing, Rng& rng) {
  Vec3 centre, axes;
  for (int a = 0; a < 3; ++a) {
    const int n = extent_of(e, a);
    centre[a] = 0.5 * (n - 1) + uniform(rng, -0.12, 0.12) * n;
    axes[a] = uniform(rng, 0.75, 1.3);
  }
  struct Wave {
    Vec3 dir;
    double amp, freq, phase;
  };
  std::array<Wave, 3> waves;
  for (auto& w : waves) w = {random_unit(rng), uniform(rng, 0.0, 0.12), uniform(rng, 1.0, 3.0), uniform(rng, 0.0, 2 * std::numbers::pi)};
  const double target = uniform(rng, 0.07, 0.15);

  const auto n = static_cast<std::size_t>(e.numel());
  std::vector<double> rho(n);
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        const Vec3 q{(z - centre[0]) / axes[0], (y - centre[1]) / axes[1], (x - centre[2]) / axes[2]};
        const double r = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
        double f = 0.0;
        if (r > 0) {
          for (const auto& w : waves) {
            const double u = (q[0] * w.dir[0] + q[1] * w.dir[1] + q[2] * w.dir[2]) / r;
            f += w.amp * std::cos(w.freq * std::numbers::pi * u + w.phase);
          }
        }
        rho[static_cast<std::size_t>(e.index(z, y, x))] = r / (1.0 + f);
      }
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target * static_cast<double>(n))));
  std::vector<double> sorted = rho;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  const double s = sorted[k - 1];
  Mask m(e, spacing);
  for (std::size_t i = 0; i < n; ++i) m.data[i] = rho[i] <= s;
  return m;
}

Mask make_small_pair(const Extents& e, const Spacing& spacing, Rng& rng) {
  const double r1 = uniform(rng, 2.0, 4.0), r2 = uniform(rng, 2.0, 4.0);
  auto centre = [&](double r) {
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = uniform(rng, r + 1.0, extent_of(e, a) - r - 2.0);
    return c;
  };
  Vec3 c1 = centre(r1), c2 = centre(r2);
  for (int tries = 0; tries < 1000; ++tries) {
    const double d = std::hypot(c1[0] - c2[0], c1[1] - c2[1], c1[2] - c2[2]);
    if (d >= r1 + r2 + 2.0) break;
    c2 = centre(r2);
  }
  Mask m(e, spacing);
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        const bool in1 = std::hypot(z - c1[0], y - c1[1], x - c1[2]) <= r1;
        const bool in2 = std::hypot(z - c2[0], y - c2[1], x - c2[2]) <= r2;
        m.at(z, y, x) = in1 || in2;
      }
  return m;
}

// Persistent random walks with unit steps, so consecutive rounded centres
// are 26-adjacent; branches sprout from existing centreline voxels, which
// keeps the tree a single 26-connected component.
Mask make_branching_tree(const Extents& e, const Spacing& spacing, Rng& rng) {
  Mask m(e, spacing);
  const double target = uniform(rng, kTreeMinFraction, kTreeMaxFraction) * static_cast<double>(e.numel());
  std::int64_t count = 0;
  std::vector<std::array<int, 3>> centreline;
  std::normal_distribution<double> n01(0.0, 1.0);

  auto walk = [&](Vec3 p, Vec3 d, int length, double radius) {
    for (int step = 0; step < length && count < target; ++step) {
      const std::array<int, 3> v{static_cast<int>(std::lround(p[0])), static_cast<int>(std::lround(p[1])),
                                 static_cast<int>(std::lround(p[2]))};
      stamp_ball(m, v, radius, count);
      centreline.push_back(v);
      Vec3 nd{d[0] + 0.35 * n01(rng), d[1] + 0.35 * n01(rng), d[2] + 0.35 * n01(rng)};
      const double len = std::sqrt(nd[0] * nd[0] + nd[1] * nd[1] + nd[2] * nd[2]);
      if (len > 1e-9) d = {nd[0] / len, nd[1] / len, nd[2] / len};
      for (int a = 0; a < 3; ++a) {
        const double hi = extent_of(e, a) - 2.0;
        if (p[a] + d[a] < 1.0 || p[a] + d[a] > hi) d[a] = -d[a];
        p[a] = std::clamp(p[a] + d[a], 1.0, hi);
      }
    }
  };

  Vec3 start;
  for (int a = 0; a < 3; ++a) start[a] = uniform(rng, 0.25, 0.75) * (extent_of(e, a) - 1);
  walk(start, random_unit(rng), 2 * std::max({e.d, e.h, e.w}), 1.5);
  for (int branch = 0; count < target; ++branch) {
    if (branch > 10000) throw std::logic_error("branching tree did not reach its target size");
    const auto& from = centreline[uniform_index(rng, centreline.size())];
    walk({double(from[0]), double(from[1]), double(from[2])}, random_unit(rng),
         static_cast<int>(uniform(rng, 6.0, 16.0)), 1.0);
  }
  return m;
}

Image make_image(const Mask& gt, double contrast, Rng& rng) {
  const Extents& e = gt.extents;
  const Vec3 k = random_unit(rng);
  const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double scale = std::numbers::pi / std::max({e.d, e.h, e.w});
  const double amp = kBiasAmplitude * contrast;
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  Image im(e, gt.spacing);
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        const double bias = amp * std::cos(scale * (k[0] * z + k[1] * y + k[2] * x) + phase);
        const double fg = gt.at(z, y, x) ? contrast * kNoiseSigma : 0.0;
        im.at(z, y, x) = static_cast<float>(fg + bias + noise(rng));
      }
  return im;
}

std::string sample_stem(std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04llu", static_cast<unsigned long long>(id));
  return buf;
}

using detail::json;

json spec_json(const TaskSpec& s) {
  return json{{"name", s.name},
              {"geometry", geometry_name(s.geometry)},
              {"extents", {s.extents.d, s.extents.h, s.extents.w}},
              {"spacing", {s.spacing[0], s.spacing[1], s.spacing[2]}},
              {"contrast", s.contrast},
              {"dataset_size", s.dataset_size},
              {"nsd_tolerance", s.nsd_tolerance},
              {"expert_threshold", s.expert_threshold}};
}

TaskSpec spec_from(const json& j, const std::string& ctx) {
  detail::check_keys(
      j, {"name", "geometry", "extents", "spacing", "contrast", "dataset_size", "nsd_tolerance", "expert_threshold"}, ctx);
  TaskSpec s;
  s.name = detail::field_or<std::string>(j, "name", s.name, ctx);
  try {
    s.geometry = parse_geometry(detail::field<std::string>(j, "geometry", ctx));
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ctx + ": key 'geometry': " + ex.what());
  }
  if (j.contains("extents")) {
    const auto v = detail::field<std::vector<int>>(j, "extents", ctx);
    if (v.size() != 3) throw ConfigError(ctx + ": key 'extents': expected 3 values");
    s.extents = {v[0], v[1], v[2]};
  }
  if (j.contains("spacing")) {
    const auto v = detail::field<std::vector<double>>(j, "spacing", ctx);
    if (v.size() != 3) throw ConfigError(ctx + ": key 'spacing': expected 3 values");
    s.spacing = {v[0], v[1], v[2]};
  }
  s.contrast = detail::field_or(j, "contrast", s.contrast, ctx);
  s.dataset_size = detail::field_or(j, "dataset_size", s.dataset_size, ctx);
  s.nsd_tolerance = detail::field_or(j, "nsd_tolerance", s.nsd_tolerance, ctx);
  s.expert_threshold = detail::field_or(j, "expert_threshold", s.expert_threshold, ctx);
  s.validate();
  return s;
}

}  // namespace

const char* geometry_name(Geometry g) {
  switch (g) {
    case Geometry::Blob: return "blob";
    case Geometry::SmallPair: return "small_pair";
    case Geometry::BranchingTree: return "branching_tree";
    case Geometry::LowContrastBlob: return "low_contrast_blob";
  }
  return "?";
}

Geometry parse_geometry(const std::string& name) {
  for (auto g : {Geometry::Blob, Geometry::SmallPair, Geometry::BranchingTree, Geometry::LowContrastBlob})
    if (name == geometry_name(g)) return g;
  throw std::invalid_argument("unknown geometry '" + name + "'");
}

void TaskSpec::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("task spec: key '" + key + "': " + why); };
  if (extents.d < 8 || extents.h < 8 || extents.w < 8) fail("extents", "every extent must be at least 8");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) fail("spacing", "must be positive");
  if (!(contrast > 0.0) || !std::isfinite(contrast)) fail("contrast", "must be positive");
  if (geometry == Geometry::LowContrastBlob && contrast > 1.0) fail("contrast", "low_contrast_blob requires contrast <= 1");
  if (dataset_size < 2) fail("dataset_size", "must be at least 2");
  if (!(nsd_tolerance > 0.0)) fail("nsd_tolerance", "must be positive");
  if (!(expert_threshold > 0.0 && expert_threshold <= 1.0)) fail("expert_threshold", "must lie in (0, 1]");
}

FractionBand fraction_band(Geometry g) {
  switch (g) {
    case Geometry::Blob:
    case Geometry::LowContrastBlob: return {0.05, 0.20};
    case Geometry::BranchingTree: return {0.005, 0.02};
    case Geometry::SmallPair: return {0.0, 1.0};
  }
  return {};
}

Sample generate_sample(const TaskSpec& spec, std::uint64_t id, std::uint64_t seed) {
  spec.validate();
  // spacing is stored as f32 on disk; round now so saved and fresh samples agree
  const Spacing sp{static_cast<float>(spec.spacing[0]), static_cast<float>(spec.spacing[1]),
                   static_cast<float>(spec.spacing[2])};
  Rng shape_rng = make_rng({seed, kTagShape});
  Mask gt;
  switch (spec.geometry) {
    case Geometry::Blob:
    case Geometry::LowContrastBlob: gt = make_blob(spec.extents, sp, shape_rng); break;
    case Geometry::SmallPair: gt = make_small_pair(spec.extents, sp, shape_rng); break;
    case Geometry::BranchingTree: gt = make_branching_tree(spec.extents, sp, shape_rng); break;
  }
  Rng image_rng = make_rng({seed, kTagImage});
  Sample s;
  s.id = id;
  s.image = make_image(gt, spec.contrast, image_rng);
  s.gt = std::move(gt);
  s.seed = seed;
  return s;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t id) { return derive_seed({master_seed, kTagSample, id}); }

SampleRefs Dataset::refs(const std::vector<std::uint64_t>& ids) const {
  SampleRefs out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(&samples.at(static_cast<std::size_t>(id)));
  return out;
}

Dataset generate_task(const TaskSpec& spec, std::uint64_t master_seed) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.master_seed = master_seed;
  const auto n = static_cast<std::uint64_t>(spec.dataset_size);
  for (std::uint64_t id = 0; id < n; ++id) ds.samples.push_back(generate_sample(spec, id, sample_seed(master_seed, id)));

  std::vector<std::uint64_t> ids(n);
  for (std::uint64_t i = 0; i < n; ++i) ids[i] = i;
  Rng rng = make_rng({master_seed, kTagSplit});
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
  const auto n_train = static_cast<std::ptrdiff_t>(n / 2);
  ds.train.assign(ids.begin(), ids.begin() + n_train);
  ds.holdout.assign(ids.begin() + n_train, ids.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.holdout.begin(), ds.holdout.end());
  return ds;
}

std::string task_spec_to_json(const TaskSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

TaskSpec task_spec_from_json(const std::string& text) { return spec_from(detail::parse_json(text, "task spec"), "task spec"); }

TaskSpec load_task_spec(const std::filesystem::path& path) { return task_spec_from_json(read_file(path)); }

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "volumes");
  for (const auto& s : ds.samples) {
    save_volume(dir / "volumes" / (sample_stem(s.id) + "_image.clvx"), s.image);
    save_volume(dir / "volumes" / (sample_stem(s.id) + "_label.clvx"), s.gt);
  }
  json j{{"spec", spec_json(ds.spec)}, {"master_seed", ds.master_seed}, {"train", ds.train}, {"holdout", ds.holdout}};
  std::vector<std::uint64_t> seeds;
  for (const auto& s : ds.samples) seeds.push_back(s.seed);
  j["sample_seeds"] = seeds;
  write_file_atomic(dir / "task.json", j.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto meta = dir / "task.json";
  if (!std::filesystem::exists(meta)) throw MissingArtifact("dataset not found: " + meta.string());
  const std::string ctx = meta.string();
  const json j = detail::parse_json(read_file(meta), ctx);
  detail::check_keys(j, {"spec", "master_seed", "train", "holdout", "sample_seeds"}, ctx);
  Dataset ds;
  if (!j.contains("spec")) throw ConfigError(ctx + ": missing key 'spec'");
  ds.spec = spec_from(j.at("spec"), ctx + ": spec");
  ds.master_seed = detail::field<std::uint64_t>(j, "master_seed", ctx);
  ds.train = detail::field<std::vector<std::uint64_t>>(j, "train", ctx);
  ds.holdout = detail::field<std::vector<std::uint64_t>>(j, "holdout", ctx);
  const auto seeds = detail::field<std::vector<std::uint64_t>>(j, "sample_seeds", ctx);
  if (seeds.size() != static_cast<std::size_t>(ds.spec.dataset_size))
    throw ConfigError(ctx + ": key 'sample_seeds': expected " + std::to_string(ds.spec.dataset_size) + " entries");
  for (std::uint64_t id = 0; id < seeds.size(); ++id) {
    Sample s;
    s.id = id;
    s.seed = seeds[id];
    s.image = load_image(dir / "volumes" / (sample_stem(id) + "_image.clvx"));
    s.gt = load_mask(dir / "volumes" / (sample_stem(id) + "_label.clvx"));
    require_same_extents(s.image.extents, s.gt.extents, "load_dataset");
    ds.samples.push_back(std::move(s));
  }
  for (auto id : ds.train)
    if (id >= seeds.size()) throw ConfigError(ctx + ": key 'train': sample id out of range");
  for (auto id : ds.holdout)
    if (id >= seeds.size()) throw ConfigError(ctx + ": key 'holdout': sample id out of range");
  return ds;
}

}  // namespace clopa
