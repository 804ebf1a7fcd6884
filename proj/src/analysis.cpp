#include "karat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>

#include "karat/error.hpp"
#include "karat/harness.hpp"
#include "karat/svd.hpp"

namespace karat::analysis {

using train::format_number;

namespace {

MatrixSpectrum spectrum_of(const Tensor& a, std::size_t layer, std::size_t head, std::size_t sample,
                           const char* kind) {
  const std::string label = std::string(kind) + " attention L" + std::to_string(layer) + " H" +
                            std::to_string(head) + " sample " + std::to_string(sample);
  const auto res = linalg::svd(a.data(), a.rows(), a.cols(), label);
  MatrixSpectrum s;
  s.layer = layer;
  s.head = head;
  s.sample = sample;
  s.sigma = res.s;
  s.reconstruction_error = linalg::relative_frobenius_error(a.data(), res.reconstruct());
  return s;
}

}  // namespace

SpectraReport spectral_scan(const vit::VisionTransformer& model, const std::vector<Tensor>& samples,
                            const std::vector<std::size_t>& layers) {
  if (samples.empty()) throw ConfigError("spectral scan needs at least one sample");
  for (std::size_t j : layers) {
    if (j >= model.config().depth) {
      throw ConfigError("layer " + std::to_string(j) + " out of range (depth " +
                        std::to_string(model.config().depth) + ")");
    }
  }
  SpectraReport report;
  report.tokens = model.config().tokens();
  const double sqrt_n = std::sqrt(static_cast<double>(report.tokens));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto all = model.extract_all_attention(samples[s]);
    for (std::size_t j : layers) {
      for (std::size_t i = 0; i < all[j].pre.size(); ++i) {
        report.pre.push_back(spectrum_of(all[j].pre[i], j, i, s, "pre"));
        report.post.push_back(spectrum_of(all[j].post[i], j, i, s, "post"));
        const Tensor& a = all[j].post[i];
        double ones_sq = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          double row = 0.0;
          for (std::size_t c = 0; c < a.cols(); ++c) row += a.at(r, c);
          report.max_row_sum_error = std::max(report.max_row_sum_error, std::abs(row - 1.0));
          ones_sq += row * row;
        }
        report.max_ones_norm_error = std::max(report.max_ones_norm_error, std::abs(std::sqrt(ones_sq) - sqrt_n));
      }
    }
  }
  for (const auto* list : {&report.pre, &report.post}) {
    for (const auto& m : *list) {
      report.max_reconstruction_error = std::max(report.max_reconstruction_error, m.reconstruction_error);
    }
  }
  report.pre_aggregate = aggregate_log_spectra(report.pre);
  report.post_aggregate = aggregate_log_spectra(report.post);
  return report;
}

std::vector<IndexAggregate> aggregate_log_spectra(const std::vector<MatrixSpectrum>& spectra) {
  std::vector<IndexAggregate> out;
  if (spectra.empty()) return out;
  const std::size_t len = spectra.front().sigma.size();
  out.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (const auto& s : spectra) {
      const double l = std::log(std::max(s.sigma.at(i), 1e-300));
      lo = std::min(lo, l);
      hi = std::max(hi, l);
      sum += l;
    }
    out[i] = {lo, sum / static_cast<double>(spectra.size()), hi};
  }
  return out;
}

ScreeResult scree_count(std::span<const double> sigma) {
  if (sigma.empty() || std::all_of(sigma.begin(), sigma.end(), [](double v) { return v == 0.0; })) {
    return {0, false};
  }
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0) || (i > 0 && sigma[i] > sigma[i - 1])) {
      throw ContractError("scree_count expects non-negative values sorted descending");
    }
  }
  if (sigma.size() < 3) return {sigma.size(), true};
  const double eps = 1e-10 * sigma[0];
  std::vector<double> l(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) l[i] = std::log(sigma[i] + eps);
  std::size_t best = 1;
  double best_curv = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < l.size(); ++i) {
    const double c = l[i - 1] - 2.0 * l[i] + l[i + 1];
    if (c > best_curv) {
      best_curv = c;
      best = i;
    }
  }
  if (best_curv < kScreeMinCurvature) return {sigma.size(), true};
  // `best` is 0-based, so it already equals the number of values before the elbow.
  return {best, false};
}

void write_spectra_csv(std::ostream& out, const std::vector<MatrixSpectrum>& spectra) {
  out << "layer,head,sample,index,sigma\n";
  for (const auto& s : spectra) {
    for (std::size_t i = 0; i < s.sigma.size(); ++i) {
      out << s.layer << ',' << s.head << ',' << s.sample << ',' << i << ',' << format_number(s.sigma[i]) << '\n';
    }
  }
}

void write_spectra_summary_csv(std::ostream& out, const SpectraReport& report) {
  out << "kind,layer,head,sample,scree_count,no_elbow,sigma1,reconstruction_error\n";
  for (const auto& [kind, list] : {std::pair{"pre", &report.pre}, std::pair{"post", &report.post}}) {
    for (const auto& s : *list) {
      const auto sc = scree_count(s.sigma);
      out << kind << ',' << s.layer << ',' << s.head << ',' << s.sample << ',' << sc.count << ','
          << (sc.no_elbow ? 1 : 0) << ',' << format_number(s.sigma.front()) << ','
          << format_number(s.reconstruction_error) << '\n';
    }
  }
}

std::string parameter_group(const std::string& name) {
  if (name.starts_with("meta.")) return "";
  if (name.starts_with("karat.")) return "karat";
  if (name.find(".attn.") != std::string::npos) return "attention";
  if (name.find(".mlp.") != std::string::npos) return "mlp";
  return "other";
}

std::size_t Histogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

double Histogram::bin_lo(std::size_t i) const {
  return -range + 2.0 * range * static_cast<double>(i) / static_cast<double>(counts.size());
}

double Histogram::bin_hi(std::size_t i) const { return bin_lo(i + 1); }

std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins, double range) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (!(range > 0.0)) throw ConfigError("histogram range must be positive");
  std::vector<std::size_t> counts(bins, 0);
  const double width = 2.0 * range / static_cast<double>(bins);
  for (double v : values) {
    double pos = std::floor((v + range) / width);
    pos = std::clamp(pos, 0.0, static_cast<double>(bins - 1));
    ++counts[static_cast<std::size_t>(pos)];
  }
  return counts;
}

std::vector<Histogram> weight_histogram(const std::vector<NamedTensor>& entries, std::size_t bins, double range) {
  std::map<std::string, std::vector<double>> groups;
  double largest = 0.0;
  for (const auto& e : entries) {
    const std::string g = parameter_group(e.name);
    if (g.empty()) continue;
    auto& dst = groups[g];
    for (double v : e.tensor.data()) {
      dst.push_back(v);
      largest = std::max(largest, std::abs(v));
    }
  }
  if (range <= 0.0) range = largest > 0.0 ? largest : 1.0;
  std::vector<Histogram> out;
  for (const char* g : {"attention", "karat", "mlp", "other"}) {
    const auto it = groups.find(g);
    if (it == groups.end() || it->second.empty()) continue;
    out.push_back({g, range, histogram(it->second, bins, range)});
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const std::vector<Histogram>& histograms) {
  out << "group,bin_lo,bin_hi,count\n";
  for (const auto& h : histograms) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      out << h.group << ',' << format_number(h.bin_lo(i)) << ',' << format_number(h.bin_hi(i)) << ','
          << h.counts[i] << '\n';
    }
  }
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Scales each segment of `dir` to the norm of the same segment of `anchor`.
std::vector<double> filter_normalized(const std::vector<double>& dir, const std::vector<double>& anchor,
                                      const std::vector<std::size_t>& segments) {
  std::vector<double> out = dir;
  std::size_t offset = 0;
  for (std::size_t len : segments) {
    const std::span<const double> d(dir.data() + offset, len), a(anchor.data() + offset, len);
    const double dn = std::sqrt(dot(d, d)), an = std::sqrt(dot(a, a));
    if (dn > 0.0) {
      for (std::size_t i = 0; i < len; ++i) out[offset + i] = dir[offset + i] * (an / dn);
    }
    offset += len;
  }
  if (offset != dir.size()) throw DimensionError("filter normalization segments do not cover the parameters");
  return out;
}

}  // namespace

LandscapeGrid loss_landscape(const std::vector<std::vector<double>>& trajectory, const LossFn& loss,
                             const LandscapeOptions& options, const std::vector<std::size_t>& segments) {
  if (trajectory.size() < 3) {
    throw NumericError("rank-deficient trajectory: " + std::to_string(trajectory.size()) +
                       " checkpoint(s) give fewer than two independent directions (need >= 3)");
  }
  if (options.resolution < 2) throw ConfigError("landscape resolution must be at least 2");
  if (!(options.extent > 0.0)) throw ConfigError("landscape extent must be positive");
  const auto& anchor = trajectory.back();
  const std::size_t p = anchor.size(), t = trajectory.size() - 1;
  for (const auto& theta : trajectory) {
    if (theta.size() != p) throw DimensionError("checkpoints in the trajectory differ in parameter count");
  }
  // Delta matrix, P x (T-1), row-major.
  std::vector<double> deltas(p * t);
  for (std::size_t c = 0; c < t; ++c) {
    for (std::size_t r = 0; r < p; ++r) deltas[r * t + c] = trajectory[c][r] - anchor[r];
  }
  const auto dec = linalg::svd(deltas, p, t, "trajectory delta matrix");
  LandscapeGrid grid;
  grid.singular_values = dec.s;
  if (dec.s[0] == 0.0 || dec.s[1] <= 1e-12 * dec.s[0]) {
    throw NumericError("rank-deficient trajectory: parameter deltas span fewer than two directions (sigma_2 = " +
                       format_number(dec.s[1]) + ")");
  }
  for (auto* dir : {&grid.dir1, &grid.dir2}) dir->resize(p);
  for (std::size_t r = 0; r < p; ++r) {
    grid.dir1[r] = dec.u[r * dec.k + 0];
    grid.dir2[r] = dec.u[r * dec.k + 1];
  }
  // Sign convention: the largest-magnitude component of each direction is positive.
  for (auto* dir : {&grid.dir1, &grid.dir2}) {
    const auto it = std::max_element(dir->begin(), dir->end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*it < 0.0) {
      for (double& v : *dir) v = -v;
    }
  }

  std::vector<double> step1 = grid.dir1, step2 = grid.dir2;
  if (options.filter_normalize) {
    const std::vector<std::size_t> segs = segments.empty() ? std::vector<std::size_t>{p} : segments;
    step1 = filter_normalized(grid.dir1, anchor, segs);
    step2 = filter_normalized(grid.dir2, anchor, segs);
  } else {
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t c = 0; c < t; ++c) {
      std::vector<double> delta(p);
      for (std::size_t r = 0; r < p; ++r) delta[r] = deltas[r * t + c];
      e1 = std::max(e1, std::abs(dot(delta, grid.dir1)));
      e2 = std::max(e2, std::abs(dot(delta, grid.dir2)));
    }
    grid.scale1 = e1 > 0.0 ? e1 : 1.0;
    grid.scale2 = e2 > 0.0 ? e2 : 1.0;
  }
  for (std::size_t c = 0; c <= t; ++c) {
    std::vector<double> delta(p);
    for (std::size_t r = 0; r < p; ++r) delta[r] = trajectory[c][r] - anchor[r];
    grid.trajectory.emplace_back(dot(delta, step1) / (grid.scale1 * dot(step1, step1)),
                                 dot(delta, step2) / (grid.scale2 * dot(step2, step2)));
  }

  const std::size_t res = options.resolution;
  grid.coords.resize(res);
  for (std::size_t i = 0; i < res; ++i) {
    grid.coords[i] = options.extent * (2.0 * static_cast<double>(i) / static_cast<double>(res - 1) - 1.0);
  }
  grid.anchor_loss = loss(anchor);
  grid.loss.assign(res * res, 0.0);

  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto points = static_cast<long>(res * res);
#pragma omp parallel for schedule(dynamic)
  for (long idx = 0; idx < points; ++idx) {
    try {
      const std::size_t ia = static_cast<std::size_t>(idx) % res, ib = static_cast<std::size_t>(idx) / res;
      const double a = grid.coords[ia] * grid.scale1, b = grid.coords[ib] * grid.scale2;
      std::vector<double> theta(p);
      for (std::size_t r = 0; r < p; ++r) theta[r] = anchor[r] + a * step1[r] + b * step2[r];
      grid.loss[static_cast<std::size_t>(idx)] = loss(theta);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return grid;
}

LandscapeGrid model_loss_landscape(const vit::VisionTransformer& prototype,
                                   const std::vector<std::filesystem::path>& checkpoints,
                                   const data::Dataset& eval, const LandscapeOptions& options) {
  std::vector<std::vector<double>> trajectory;
  vit::VisionTransformer scratch = prototype.clone();
  for (const auto& path : checkpoints) {
    scratch.load_state(load_checkpoint(path));
    trajectory.push_back(scratch.flatten());
  }
  std::vector<std::size_t> segments;
  for (const auto& p : prototype.parameters()) segments.push_back(p.tensor.size());
  const LossFn loss = [&prototype, &eval](std::span<const double> params) {
    vit::VisionTransformer model = prototype.clone();
    model.unflatten(params);
    return train::dataset_loss(model, eval);
  };
  return loss_landscape(trajectory, loss, options, segments);
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
  out << "alpha,beta,loss\n";
  const std::size_t res = grid.coords.size();
  for (std::size_t ib = 0; ib < res; ++ib) {
    for (std::size_t ia = 0; ia < res; ++ia) {
      out << format_number(grid.coords[ia]) << ',' << format_number(grid.coords[ib]) << ','
          << format_number(grid.at(ia, ib)) << '\n';
    }
  }
}

}  // namespace karat::analysis
