#include "growbrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace growbrain {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = gather_rows(features, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  out.class_count = class_count;
  out.name = name;
  return out;
}

void Dataset::validate() const {
  if (features.rows() != labels.size())
    throw ConfigError("dataset '" + name + "': " + std::to_string(features.rows()) +
                      " feature rows but " + std::to_string(labels.size()) + " labels");
  for (auto y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw ConfigError("dataset '" + name + "': label " + std::to_string(y) + " outside [0, " +
                        std::to_string(class_count) + ")");
}

Dataset select_classes(const Dataset& d, std::span<const Label> keep, std::string name) {
  std::vector<std::size_t> rows;
  std::vector<Label> relabel;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto it = std::find(keep.begin(), keep.end(), d.labels[i]);
    if (it == keep.end()) continue;
    rows.push_back(i);
    relabel.push_back(static_cast<Label>(it - keep.begin()));
  }
  Dataset out = d.subset(rows);
  out.labels = std::move(relabel);
  out.class_count = keep.size();
  out.name = std::move(name);
  return out;
}

Dataset limit_per_class(const Dataset& d, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::size_t> taken(d.class_count, 0);
  std::vector<std::size_t> keep;
  for (auto i : order) {
    auto c = static_cast<std::size_t>(d.labels[i]);
    if (taken[c] < per_class) {
      ++taken[c];
      keep.push_back(i);
    }
  }
  std::sort(keep.begin(), keep.end());
  return d.subset(keep);
}

void TransferTaskSpec::validate() const {
  if (source_classes < 2 || target_classes < 2) throw ConfigError("tasks need at least 2 classes");
  if (dim == 0 || latent_dim == 0 || modes_per_class == 0 || source_samples_per_class == 0 ||
      target_samples_per_class == 0)
    throw ConfigError("task spec counts must be positive");
  if (latent_dim * 2 > dim)
    throw ConfigError("dim must be at least twice latent_dim to fit disjoint task subspaces");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("overlap must lie in [0, 1]");
  if (!(center_scale > 0.0) || !(mode_noise >= 0.0) || !(ambient_noise >= 0.0))
    throw ConfigError("task spec scales must be non-negative (center_scale positive)");
}

namespace {

/// Latent description of one task: orthonormal basis columns in R^dim and
/// per-class mode centres in latent coordinates.
struct LatentTask {
  std::vector<std::vector<double>> basis;              // latent_dim vectors of length dim
  std::vector<std::vector<std::vector<double>>> modes;  // [class][mode][latent]
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Random unit vector orthogonal to every vector in `against` (Gram-Schmidt, two passes).
std::vector<double> orthogonal_direction(Rng& rng, std::size_t dim,
                                         const std::vector<const std::vector<double>*>& against) {
  for (;;) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto* u : against) {
        const double p = dot(v, *u);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * (*u)[i];
      }
    }
    const double n = std::sqrt(dot(v, v));
    if (n > 1e-6) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

std::vector<std::vector<double>> random_modes(Rng& rng, std::size_t modes, std::size_t latent,
                                              double scale) {
  std::vector<std::vector<double>> out(modes, std::vector<double>(latent));
  for (auto& m : out)
    for (double& v : m) v = rng.normal(0.0, scale);
  return out;
}

LatentTask root_task(Rng& rng, const TransferTaskSpec& spec, std::size_t classes) {
  LatentTask t;
  std::vector<const std::vector<double>*> prev;
  for (std::size_t k = 0; k < spec.latent_dim; ++k) {
    t.basis.push_back(orthogonal_direction(rng, spec.dim, prev));
    prev.clear();
    for (const auto& b : t.basis) prev.push_back(&b);
  }
  for (std::size_t c = 0; c < classes; ++c)
    t.modes.push_back(random_modes(rng, spec.modes_per_class, spec.latent_dim, spec.center_scale));
  return t;
}

LatentTask derive_task(Rng& rng, const TransferTaskSpec& spec, const LatentTask& parent,
                       double overlap, std::size_t classes) {
  const std::size_t k = spec.latent_dim;
  const auto shared = static_cast<std::size_t>(std::lround(overlap * static_cast<double>(k)));
  LatentTask t;
  for (std::size_t i = 0; i < shared; ++i) t.basis.push_back(parent.basis[i]);
  std::vector<const std::vector<double>*> against;
  for (const auto& b : parent.basis) against.push_back(&b);
  for (std::size_t i = shared; i < k; ++i) {
    std::vector<const std::vector<double>*> all = against;
    for (std::size_t j = shared; j < t.basis.size(); ++j) all.push_back(&t.basis[j]);
    t.basis.push_back(orthogonal_direction(rng, spec.dim, all));
  }
  const std::size_t parent_classes = parent.modes.size();
  std::vector<std::size_t> perm(parent_classes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(perm), rng);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& src = parent.modes[perm[c % parent_classes]];
    auto fresh = random_modes(rng, spec.modes_per_class, k, spec.center_scale);
    for (std::size_t m = 0; m < spec.modes_per_class; ++m)
      for (std::size_t i = 0; i < shared; ++i) fresh[m][i] = src[m][i];
    t.modes.push_back(std::move(fresh));
  }
  return t;
}

Dataset sample_task(Rng& rng, const TransferTaskSpec& spec, const LatentTask& t,
                    std::size_t per_class, std::string name) {
  const std::size_t classes = t.modes.size();
  Dataset d;
  d.class_count = classes;
  d.name = std::move(name);
  d.features = Matrix(classes * per_class, spec.dim);
  d.labels.reserve(classes * per_class);
  std::vector<double> z(spec.latent_dim);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      const auto& centre = t.modes[c][s % spec.modes_per_class];
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = centre[i] + rng.normal(0.0, spec.mode_noise);
      auto x = d.features.row(row);
      for (std::size_t j = 0; j < spec.dim; ++j) x[j] = rng.normal(0.0, spec.ambient_noise);
      for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < spec.dim; ++j) x[j] += z[i] * t.basis[i][j];
      d.labels.push_back(static_cast<Label>(c));
    }
  }
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> synth_transfer_tasks(std::uint64_t seed, const TransferTaskSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const auto source = root_task(rng, spec, spec.source_classes);
  const auto target = derive_task(rng, spec, source, spec.overlap, spec.target_classes);
  auto src = sample_task(rng, spec, source, spec.source_samples_per_class, "synth-source");
  auto tgt = sample_task(rng, spec, target, spec.target_samples_per_class, "synth-target");
  return {std::move(src), std::move(tgt)};
}

std::vector<Dataset> synth_task_sequence(std::uint64_t seed, const TransferTaskSpec& spec,
                                         std::span<const double> overlaps) {
  spec.validate();
  for (double o : overlaps)
    if (!(o >= 0.0 && o <= 1.0)) throw ConfigError("overlap must lie in [0, 1]");
  Rng rng(seed);
  std::vector<LatentTask> latent{root_task(rng, spec, spec.source_classes)};
  for (double o : overlaps) latent.push_back(derive_task(rng, spec, latent.back(), o, spec.target_classes));
  std::vector<Dataset> out;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const auto per_class = i == 0 ? spec.source_samples_per_class : spec.target_samples_per_class;
    out.push_back(sample_task(rng, spec, latent[i], per_class, "synth-task" + std::to_string(i)));
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  if (images.size() < 4)
    throw IdxError(IdxError::Kind::Truncated, "image file shorter than its magic number");
  if (const auto m = read_be32(images, 0); m != kIdxImagesMagic)
    throw IdxError(IdxError::Kind::BadMagic,
                   "image file magic " + hex32(m) + ", expected " + hex32(kIdxImagesMagic));
  if (labels.size() < 4)
    throw IdxError(IdxError::Kind::Truncated, "label file shorter than its magic number");
  if (const auto m = read_be32(labels, 0); m != kIdxLabelsMagic)
    throw IdxError(IdxError::Kind::BadMagic,
                   "label file magic " + hex32(m) + ", expected " + hex32(kIdxLabelsMagic));
  if (images.size() < 16) throw IdxError(IdxError::Kind::Truncated, "image header truncated");
  if (labels.size() < 8) throw IdxError(IdxError::Kind::Truncated, "label header truncated");

  const std::size_t n = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t n_labels = read_be32(labels, 4);
  const std::size_t pixels = rows * cols;  // both < 2^32, fits in 64 bits
  const std::size_t payload = images.size() - 16;
  if ((pixels != 0 && n > payload / pixels) || n * pixels > payload)
    throw IdxError(IdxError::Kind::Truncated,
                   "image payload has " + std::to_string(payload) + " bytes, header declares " +
                       std::to_string(n) + " images of " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  if (labels.size() - 8 < n_labels)
    throw IdxError(IdxError::Kind::Truncated,
                   "label payload has " + std::to_string(labels.size() - 8) + " bytes, header needs " +
                       std::to_string(n_labels));
  if (n != n_labels)
    throw IdxError(IdxError::Kind::CountMismatch,
                   std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");

  Dataset d;
  d.name = "idx";
  d.features = Matrix(n, pixels);
  auto dst = d.features.values();
  for (std::size_t i = 0; i < n * pixels; ++i) dst[i] = static_cast<double>(images[16 + i]) / 255.0;
  d.labels.resize(n);
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<Label>(labels[8 + i]);
    classes = std::max(classes, static_cast<std::size_t>(labels[8 + i]) + 1);
  }
  d.class_count = classes;
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  auto d = parse_idx(img, lab);
  d.name = images.filename().string();
  return d;
}

SplitIndices split_indices(const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0)) throw ConfigError("split fractions must all be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  d.validate();

  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < d.size(); ++i)
    by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

  Rng rng(seed);
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> parts{&out.train, &out.val, &out.test};
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 3)
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " samples; a stratified split needs at least 3");
    shuffle(std::span<std::size_t>(idx), rng);
    std::array<std::size_t, 3> count{};
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      count[p] = static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * fractions[p]));
      assigned += count[p];
    }
    for (std::size_t p = 0; assigned < idx.size(); p = (p + 1) % 3, ++assigned) ++count[p];
    std::size_t cursor = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p]->insert(parts[p]->end(), idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                       idx.begin() + static_cast<std::ptrdiff_t>(cursor + count[p]));
      cursor += count[p];
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return out;
}

SplitSets split(const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed) {
  const auto idx = split_indices(d, fractions, seed);
  SplitSets s{d.subset(idx.train), d.subset(idx.val), d.subset(idx.test)};
  s.train.name = d.name + "/train";
  s.val.name = d.name + "/val";
  s.test.name = d.name + "/test";
  return s;
}

}  // namespace growbrain
