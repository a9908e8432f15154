#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaodm/rng.hpp"
#include "adaodm/tensor.hpp"

namespace adaodm {

struct Dataset {
  Tensor x;            // n x dim
  std::vector<int> y;  // n labels

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
};

/// A mini-batch tagged with the source-domain index it was drawn from.
struct DomainBatch {
  Tensor x;
  std::vector<int> y;
  int domain = -1;

  std::size_t size() const { return y.size(); }
};

struct DomainSpec {
  enum class Family { kRotatedMoons, kShiftedBlobs };

  Family family = Family::kRotatedMoons;
  double domain_param = 0.0;  // rotation degrees, or mean-shift scale
  std::size_t n_samples = 1000;
  double noise_sigma = 0.15;
  std::uint64_t seed = 0;
};

inline void validate(const DomainSpec& spec) {
  if (spec.n_samples < 10) throw std::invalid_argument("DomainSpec: n_samples must be >= 10");
  if (spec.noise_sigma < 0.0) throw std::invalid_argument("DomainSpec: noise_sigma must be >= 0");
}

/// Two interleaved half circles (standard two-moons layout), isotropic
/// Gaussian noise, then the whole cloud rotated about the origin by
/// domain_param degrees.
inline Dataset make_rotated_moons(const DomainSpec& spec) {
  validate(spec);
  const std::size_t n = spec.n_samples;
  const std::size_t n0 = n - n / 2;
  Rng rng(spec.seed);
  Dataset ds;
  ds.x = Tensor({n, 2});
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = i < n0;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double px = outer ? std::cos(t) : 1.0 - std::cos(t);
    double py = outer ? std::sin(t) : 0.5 - std::sin(t);
    px += spec.noise_sigma * rng.normal();
    py += spec.noise_sigma * rng.normal();
    ds.x(i, 0) = px;
    ds.x(i, 1) = py;
    ds.y[i] = outer ? 0 : 1;
  }
  const double theta = spec.domain_param * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t i = 0; i < n; ++i) {
    const double px = ds.x(i, 0), py = ds.x(i, 1);
    ds.x(i, 0) = c * px - s * py;
    ds.x(i, 1) = s * px + c * py;
  }
  return ds;
}

/// Three Gaussian class clusters in 2-D with fixed means. The domain shifts
/// every point by domain_param along the (1,1)/sqrt(2) direction and scales
/// feature 0 by (1 + domain_param/10).
inline Dataset make_shifted_blobs(const DomainSpec& spec) {
  validate(spec);
  static constexpr double kMeans[3][2] = {{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}};
  const std::size_t n = spec.n_samples;
  Rng rng(spec.seed);
  Dataset ds;
  ds.x = Tensor({n, 2});
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    ds.x(i, 0) = kMeans[c][0] + spec.noise_sigma * rng.normal();
    ds.x(i, 1) = kMeans[c][1] + spec.noise_sigma * rng.normal();
    ds.y[i] = c;
  }
  const double shift = spec.domain_param / std::numbers::sqrt2;
  const double scale0 = 1.0 + spec.domain_param / 10.0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.x(i, 0) = (ds.x(i, 0) + shift) * scale0;
    ds.x(i, 1) = ds.x(i, 1) + shift;
  }
  return ds;
}

inline Dataset make_domain(const DomainSpec& spec) {
  return spec.family == DomainSpec::Family::kRotatedMoons ? make_rotated_moons(spec)
                                                          : make_shifted_blobs(spec);
}

struct SplitDataset {
  Dataset train;
  Dataset val;
  double fraction = 0.8;
};

/// Seeded shuffle then prefix split; |train| = round(fraction * n).
inline SplitDataset split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split: fraction must be in (0,1)");
  }
  const std::size_t n = ds.size();
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("split: degenerate split sizes for n=" + std::to_string(n));
  }
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  SplitDataset out;
  out.fraction = fraction;
  out.train.x = Tensor({n_train, ds.dim()});
  out.train.y.resize(n_train);
  out.val.x = Tensor({n - n_train, ds.dim()});
  out.val.y.resize(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = perm[i];
    Dataset& dst = i < n_train ? out.train : out.val;
    const std::size_t row = i < n_train ? i : i - n_train;
    for (std::size_t d = 0; d < ds.dim(); ++d) dst.x(row, d) = ds.x(src, d);
    dst.y[row] = ds.y[src];
  }
  return out;
}

/// Seeded permutation chopped into batches of size B. Training mode drops a
/// trailing short batch; streaming/eval keeps it.
inline std::vector<DomainBatch> make_batches(const Dataset& ds, std::size_t batch_size,
                                             std::uint64_t epoch_seed, bool drop_last,
                                             int domain = -1) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch size must be >= 1");
  Rng rng(epoch_seed);
  const auto perm = rng.permutation(ds.size());
  std::vector<DomainBatch> batches;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, ds.size() - start);
    if (len < batch_size && drop_last) break;
    DomainBatch b;
    b.domain = domain;
    b.x = Tensor({len, ds.dim()});
    b.y.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t src = perm[start + i];
      for (std::size_t d = 0; d < ds.dim(); ++d) b.x(i, d) = ds.x(src, d);
      b.y[i] = ds.y[src];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Cycling training batcher: reshuffles at every epoch boundary with
/// base_seed ^ epoch so batch order is reproducible.
class EpochBatcher {
 public:
  EpochBatcher(const Dataset& ds, std::size_t batch_size, std::uint64_t base_seed, int domain)
      : ds_(&ds), batch_size_(batch_size), base_seed_(base_seed), domain_(domain) {
    if (ds.size() < batch_size) {
      throw std::invalid_argument("EpochBatcher: dataset of " + std::to_string(ds.size()) +
                                  " smaller than batch size " + std::to_string(batch_size));
    }
    reshuffle();
  }

  DomainBatch next() {
    if (cursor_ + batch_size_ > perm_.size()) {
      ++epoch_;
      reshuffle();
    }
    DomainBatch b;
    b.domain = domain_;
    b.x = Tensor({batch_size_, ds_->dim()});
    b.y.resize(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i) {
      const std::size_t src = perm_[cursor_ + i];
      for (std::size_t d = 0; d < ds_->dim(); ++d) b.x(i, d) = ds_->x(src, d);
      b.y[i] = ds_->y[src];
    }
    cursor_ += batch_size_;
    return b;
  }

 private:
  void reshuffle() {
    Rng rng(base_seed_ ^ epoch_);
    perm_ = rng.permutation(ds_->size());
    cursor_ = 0;
  }

  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t base_seed_;
  int domain_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

/// Per-feature standardization fitted on pooled source training splits and
/// applied unchanged to every other split, including the target domain.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  void fit(const std::vector<const Dataset*>& sources) {
    if (sources.empty()) throw std::invalid_argument("Standardizer: no source datasets");
    const std::size_t dim = sources.front()->dim();
    mean.assign(dim, 0.0);
    stddev.assign(dim, 0.0);
    std::size_t n = 0;
    for (const auto* ds : sources) {
      for (std::size_t i = 0; i < ds->size(); ++i)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += ds->x(i, d);
      n += ds->size();
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto* ds : sources) {
      for (std::size_t i = 0; i < ds->size(); ++i)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = ds->x(i, d) - mean[d];
          stddev[d] += diff * diff;
        }
    }
    for (auto& s : stddev) {
      s = std::sqrt(s / static_cast<double>(n));
      if (s < 1e-12) s = 1.0;
    }
  }

  Tensor apply(const Tensor& x) const {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t d = 0; d < x.cols(); ++d)
        out(i, d) = (x(i, d) - mean[d]) / stddev[d];
    return out;
  }

  Dataset apply(const Dataset& ds) const { return Dataset{apply(ds.x), ds.y}; }
};

// ---------------------------------------------------------------------------
// CSV dump/load: header x0..x{d-1},label,domain

inline void save_domains_csv(const std::string& path, const std::vector<Dataset>& domains) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_domains_csv: cannot open " + path);
  const std::size_t dim = domains.empty() ? 0 : domains.front().dim();
  for (std::size_t d = 0; d < dim; ++d) os << 'x' << d << ',';
  os << "label,domain\n";
  char buf[40];
  for (std::size_t dom = 0; dom < domains.size(); ++dom) {
    const Dataset& ds = domains[dom];
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", ds.x(i, d));
        os << buf << ',';
      }
      os << ds.y[i] << ',' << dom << '\n';
    }
  }
  if (!os) throw std::runtime_error("save_domains_csv: write failed for " + path);
}

inline std::vector<Dataset> load_domains_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_domains_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("load_domains_csv: empty file " + path);
  std::size_t dim = 0;
  {
    std::stringstream hdr(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hdr, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols[cols.size() - 2] != "label" || cols.back() != "domain") {
      throw std::runtime_error("load_domains_csv: bad header in " + path);
    }
    dim = cols.size() - 2;
  }
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<int>> ys;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
    if (vals.size() != dim + 2) {
      throw std::runtime_error("load_domains_csv: bad row width in " + path);
    }
    const std::size_t dom = static_cast<std::size_t>(vals.back());
    if (dom >= xs.size()) {
      xs.resize(dom + 1);
      ys.resize(dom + 1);
    }
    for (std::size_t d = 0; d < dim; ++d) xs[dom].push_back(vals[d]);
    ys[dom].push_back(static_cast<int>(vals[dim]));
  }
  std::vector<Dataset> out;
  for (std::size_t dom = 0; dom < xs.size(); ++dom) {
    Dataset ds;
    ds.x = Tensor({ys[dom].size(), dim}, std::move(xs[dom]));
    ds.y = std::move(ys[dom]);
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace adaodm
