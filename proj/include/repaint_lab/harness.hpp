#pragma once

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/binomial.hpp>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "repaint_lab/bspline.hpp"
#include "repaint_lab/diffusion.hpp"
#include "repaint_lab/image.hpp"
#include "repaint_lab/registration.hpp"
#include "repaint_lab/repaint.hpp"
#include "repaint_lab/rng.hpp"

namespace repaint_lab {

enum class MaskMode { baseline, bilateral };

inline const char* to_string(MaskMode m) { return m == MaskMode::baseline ? "baseline" : "bilateral"; }
inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "baseline") return MaskMode::baseline;
  if (s == "bilateral") return MaskMode::bilateral;
  throw std::invalid_argument("unknown mode '" + s + "' (expected baseline|bilateral)");
}

/// Known-region mask for hiding structure s on side k. Baseline hides only
/// (s, k); bilateral also hides the contralateral copy. 1 = known.
inline BinaryMask known_mask_for(const StructureAtlas& atlas, const std::string& s, Side k, MaskMode mode) {
  const BinaryMask& own = atlas.at(s, k);
  const BinaryMask& other = atlas.at(s, opposite(k));
  if (mode == MaskMode::baseline) return mask_complement(own);
  return mask_and(mask_complement(own), mask_complement(other));
}

/// Mean of (a - b)^2 over region pixels.
inline double masked_mse(const Image& a, const Image& b, const BinaryMask& region) {
  detail::require_same_shape(a, b, "masked_mse");
  detail::require_same_shape(a, region, "masked_mse");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (region[i]) {
      const double d = a[i] - b[i];
      sum += d * d;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("masked_mse: empty region");
  return sum / static_cast<double>(n);
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Sample mean and sample std (n - 1) of finite values; NaN when undefined.
struct ScalarStats {
  double mean = kNaN;
  double stddev = kNaN;
  std::size_t count = 0;
};

inline ScalarStats scalar_stats(const std::vector<double>& values) {
  ScalarStats s;
  double sum = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      sum += v;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean = sum / static_cast<double>(s.count);
  if (s.count < 2) return s;
  double ss = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
  return s;
}

struct CellKey {
  std::string subject;
  std::string structure;
  Side side = Side::left;
  MaskMode mode = MaskMode::baseline;

  auto tie() const { return std::tie(subject, structure, side, mode); }
  bool operator==(const CellKey& o) const { return tie() == o.tie(); }
  bool operator<(const CellKey& o) const { return tie() < o.tie(); }
  /// `<subject>_<s>_<k>_<mode>`
  std::string stem() const { return subject + "_" + structure + "_" + to_string(side) + "_" + to_string(mode); }
};

/// Per-run stream seed; depends on the job's identity only.
inline std::uint64_t run_seed(std::uint64_t master, const CellKey& key, int run) {
  return derive_seed(master, {seed_tag(key.subject), seed_tag(key.structure), static_cast<std::uint64_t>(key.side),
                              static_cast<std::uint64_t>(key.mode), static_cast<std::uint64_t>(run)});
}

struct RunRecord {
  CellKey key;
  int run = 0;
  double mse = 0.0;
  double logj_mean = kNaN;
  double logj_std = kNaN;
  std::size_t fold_count = 0;
  std::uint64_t seed = 0;
  /// Mean inpainted intensity over the structure.
  double structure_mean = kNaN;
  /// Registration failed; mse is still valid, log|J| fields are not.
  bool degraded = false;
};

struct RunResult {
  RunRecord record;
  /// Composed image: inpainted inside the structure, original elsewhere.
  Image composed;
  /// log|J| inside the structure, 0 outside, NaN where folded or degraded.
  Image logj;
};

struct CellContext {
  const Image& image;
  const StructureAtlas& atlas;
  const Denoiser& model;
  const NoiseSchedule& sched;
  const RepaintConfig& repaint;
  const RegParams& reg;
};

/// One run of the experimental procedure: inpaint with the mode's known
/// mask, restore the original outside structure (s, k), register (I, I_hat),
/// then score inside the structure.
inline RunResult run_once(const CellContext& ctx, const CellKey& key, int run, std::uint64_t seed) {
  const BinaryMask& structure = ctx.atlas.at(key.structure, key.side);
  const BinaryMask known = known_mask_for(ctx.atlas, key.structure, key.side, key.mode);
  const BinaryMask keep = mask_complement(structure);
  Rng rng(seed);
  const Image raw = inpaint(ctx.image, known, ctx.model, ctx.sched, ctx.repaint, rng);

  RunResult out;
  out.composed = compose(raw, ctx.image, keep);
  RunRecord& rec = out.record;
  rec.key = key;
  rec.run = run;
  rec.seed = seed;
  const std::size_t area = structure.count();
  rec.mse = area ? masked_mse(ctx.image, out.composed, structure) : 0.0;
  rec.structure_mean = area ? region_mean(out.composed, structure) : kNaN;

  out.logj = Image(ctx.image.width(), ctx.image.height(), 0.0);
  try {
    const RegistrationResult reg = register_images(ctx.image, out.composed, ctx.reg);
    const LogJacMap lj = log_jacobian(reg.field, ctx.image.width(), ctx.image.height());
    std::vector<double> inside;
    for (std::size_t i = 0; i < structure.size(); ++i) {
      if (!structure[i]) continue;
      if (lj.folding[i]) {
        ++rec.fold_count;
        out.logj[i] = kNaN;
      } else {
        out.logj[i] = lj.log_det[i];
        inside.push_back(lj.log_det[i]);
      }
    }
    const ScalarStats st = scalar_stats(inside);
    rec.logj_mean = st.mean;
    rec.logj_std = st.stddev;
  } catch (const RegistrationError&) {
    rec.degraded = true;
    for (std::size_t i = 0; i < structure.size(); ++i)
      if (structure[i]) out.logj[i] = kNaN;
  }
  return out;
}

/// Runs 0..n_s-1 of one cell with seeds from run_seed(master_seed, key, i).
inline std::vector<RunResult> run_cell(const CellContext& ctx, const CellKey& key, int n_s, std::uint64_t master_seed) {
  if (n_s < 1) throw std::invalid_argument("run_cell: need at least one run");
  std::vector<RunResult> out;
  for (int i = 0; i < n_s; ++i) out.push_back(run_once(ctx, key, i, run_seed(master_seed, key, i)));
  return out;
}

/// Calls f(i) for i in [0, n) on up to `workers` threads. The first failing
/// index's exception is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i; !failed && (i = next++) < n;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  for (unsigned w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct CellAggregate {
  CellKey key;
  std::size_t runs = 0;
  /// Per-pixel population mean/std across runs.
  Image imean, istd;
  /// Same for log|J|; folded samples are skipped, NaN where none remain.
  Image jmean, jstd;
  ScalarStats mse;
  ScalarStats structure_mean;
  /// Mean of jstd over structure pixels where it is defined.
  double mean_logj_std = kNaN;
};

/// Across-run statistics of one cell. `runs` must share a key and be non-empty.
inline CellAggregate aggregate(const std::vector<const RunResult*>& runs, const BinaryMask& structure) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  CellAggregate a;
  a.key = runs.front()->record.key;
  a.runs = runs.size();
  const std::size_t w = structure.width(), h = structure.height();
  a.imean = Image(w, h);
  a.istd = Image(w, h);
  a.jmean = Image(w, h);
  a.jstd = Image(w, h);
  std::vector<double> mses, means;
  for (auto* r : runs) {
    if (!(r->record.key == a.key)) throw std::invalid_argument("aggregate: runs from different cells");
    detail::require_same_shape(r->composed, structure, "aggregate");
    detail::require_same_shape(r->logj, structure, "aggregate");
    mses.push_back(r->record.mse);
    means.push_back(r->record.structure_mean);
  }
  for (std::size_t p = 0; p < structure.size(); ++p) {
    double s = 0.0, js = 0.0;
    std::size_t jn = 0;
    for (auto* r : runs) {
      s += r->composed[p];
      if (!std::isnan(r->logj[p])) {
        js += r->logj[p];
        ++jn;
      }
    }
    const double m = s / static_cast<double>(runs.size());
    const double jm = jn ? js / static_cast<double>(jn) : kNaN;
    double ss = 0.0, jss = 0.0;
    for (auto* r : runs) {
      ss += (r->composed[p] - m) * (r->composed[p] - m);
      if (!std::isnan(r->logj[p])) jss += (r->logj[p] - jm) * (r->logj[p] - jm);
    }
    a.imean[p] = m;
    a.istd[p] = std::sqrt(ss / static_cast<double>(runs.size()));
    a.jmean[p] = jm;
    a.jstd[p] = jn ? std::sqrt(jss / static_cast<double>(jn)) : kNaN;
  }
  a.mse = scalar_stats(mses);
  a.structure_mean = scalar_stats(means);
  std::vector<double> inside;
  for (std::size_t p = 0; p < structure.size(); ++p)
    if (structure[p] && std::isfinite(a.jstd[p])) inside.push_back(a.jstd[p]);
  if (!inside.empty()) a.mean_logj_std = scalar_stats(inside).mean;
  return a;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2); 1 when n = 0.
inline double sign_test_p(std::size_t wins, std::size_t n) {
  if (wins > n) throw std::invalid_argument("sign_test_p: wins > n");
  if (n == 0 || wins == 0) return 1.0;
  const boost::math::binomial_distribution<double> bin(static_cast<double>(n), 0.5);
  return boost::math::cdf(boost::math::complement(bin, static_cast<double>(wins - 1)));
}

struct ComparisonRow {
  std::string subject;
  std::string structure;
  Side side = Side::left;
  double delta_mse = kNaN;            ///< mean MSE, bilateral minus baseline
  double var_ratio_intensity = kNaN;  ///< across-run variance of structure mean, bilateral / baseline
  double logjstd_ratio = kNaN;        ///< mean pixelwise log|J| std, bilateral / baseline
  double sign_p = kNaN;               ///< P(bilateral MSE > baseline MSE by chance), runs paired by index
  std::size_t pairs = 0;
  std::size_t wins = 0;
};

namespace detail {
inline double ratio_or_one(double num, double den) { return num == den ? 1.0 : num / den; }
}  // namespace detail

/// Pairs each (subject, s, k) baseline cell with its bilateral cell. Cells
/// missing a mode are skipped and named in `notices`.
inline std::vector<ComparisonRow> symmetry_comparison(const std::vector<CellAggregate>& cells,
                                                      const std::vector<RunRecord>& records,
                                                      std::vector<std::string>* notices = nullptr) {
  std::map<CellKey, const CellAggregate*> by_key;
  std::vector<CellKey> order;
  for (auto& c : cells) {
    by_key[c.key] = &c;
    CellKey base = c.key;
    base.mode = MaskMode::baseline;
    if (std::find(order.begin(), order.end(), base) == order.end()) order.push_back(base);
  }
  std::vector<ComparisonRow> rows;
  for (auto& base : order) {
    CellKey bil = base;
    bil.mode = MaskMode::bilateral;
    auto ib = by_key.find(base), il = by_key.find(bil);
    if (ib == by_key.end() || il == by_key.end()) {
      if (notices)
        notices->push_back("skipping " + base.subject + "/" + base.structure + "/" + to_string(base.side) +
                           ": needs both baseline and bilateral runs");
      continue;
    }
    const CellAggregate& a = *ib->second;
    const CellAggregate& b = *il->second;
    ComparisonRow row;
    row.subject = base.subject;
    row.structure = base.structure;
    row.side = base.side;
    row.delta_mse = b.mse.mean - a.mse.mean;
    const double va = a.structure_mean.stddev * a.structure_mean.stddev;
    const double vb = b.structure_mean.stddev * b.structure_mean.stddev;
    row.var_ratio_intensity = detail::ratio_or_one(vb, va);
    row.logjstd_ratio = detail::ratio_or_one(b.mean_logj_std, a.mean_logj_std);
    std::map<int, double> base_mse, bil_mse;
    for (auto& r : records) {
      if (r.key == base) base_mse[r.run] = r.mse;
      if (r.key == bil) bil_mse[r.run] = r.mse;
    }
    for (auto& [run, m] : base_mse) {
      auto it = bil_mse.find(run);
      if (it == bil_mse.end() || it->second == m) continue;
      ++row.pairs;
      if (it->second > m) ++row.wins;
    }
    row.sign_p = sign_test_p(row.wins, row.pairs);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace repaint_lab
