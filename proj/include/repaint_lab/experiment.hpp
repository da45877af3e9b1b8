#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "repaint_lab/gmm.hpp"
#include "repaint_lab/harness.hpp"
#include "repaint_lab/image_io.hpp"
#include "repaint_lab/kv_config.hpp"
#include "repaint_lab/mlp_denoiser.hpp"
#include "repaint_lab/phantom.hpp"
#include "repaint_lab/schedule.hpp"

namespace repaint_lab {

struct ModelSpec {
  std::string kind = "exact";  ///< exact | mixture | network
  int components = 64;
  std::filesystem::path checkpoint;
};

/// A phantom spec rendered with `seed` (derived from the master seed when
/// absent), or a pre-rendered image plus an atlas directory holding
/// `<structure>_<side>.f32grid` masks.
struct SubjectSpec {
  std::string name;
  std::optional<PhantomSpec> phantom;
  std::optional<std::uint64_t> seed;
  std::filesystem::path image;
  std::filesystem::path atlas_dir;
  int line = 0;
};

struct ExperimentConfig {
  std::vector<SubjectSpec> subjects;
  std::vector<std::string> structures;
  std::vector<Side> sides{Side::left};
  std::vector<MaskMode> modes{MaskMode::baseline, MaskMode::bilateral};
  int runs = 10;
  ScheduleConfig schedule;
  RepaintConfig repaint;
  RegParams reg;
  ModelSpec model;
  std::uint64_t seed = 0;
  std::filesystem::path out = "results";

  void validate() const {
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (subjects.empty()) throw ConfigError("no [subject] sections");
    if (structures.empty()) throw ConfigError("structures is empty");
    if (sides.empty() || modes.empty()) throw ConfigError("sides and modes must be nonempty");
    if (schedule.timesteps < 1) throw ConfigError("timesteps must be >= 1");
    try {
      repaint.validate(schedule.timesteps);
      reg.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (model.kind != "exact" && model.kind != "mixture" && model.kind != "network")
      throw ConfigError("model kind must be exact|mixture|network");
    if (model.kind == "mixture" && model.components < 1) throw ConfigError("components must be >= 1");
  }
};

namespace detail {
template <class F>
auto as_config_error(int line, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), line);
  }
}

inline void reject_unknown(const KvDocument::Section& sec, std::initializer_list<const char*> allowed) {
  for (auto& [key, e] : sec.entries) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in [" + sec.kind + "]", e.line);
  }
}
}  // namespace detail

/// Sections: [experiment], optional [registration] and [model], one
/// [subject NAME] per subject. Relative paths resolve against `base_dir`.
inline ExperimentConfig parse_experiment_config(const KvDocument& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  if (!doc.global().entries.empty())
    throw ConfigError("key outside any section", doc.global().entries.begin()->second.line);
  for (auto& sec : doc.all())
    if (!sec.kind.empty() && sec.kind != "experiment" && sec.kind != "registration" && sec.kind != "model" &&
        sec.kind != "subject")
      throw ConfigError("unknown section kind '" + sec.kind + "'", sec.line);
  auto exps = doc.sections("experiment");
  if (exps.size() != 1) throw ConfigError("expected exactly one [experiment] section");
  const auto& ex = *exps.front();
  detail::reject_unknown(ex, {"seed", "runs", "structures", "sides", "modes", "schedule", "timesteps", "jump_length",
                              "resamplings", "sigma_mode", "known_variance", "beta_1", "beta_T", "out"});
  auto line = [](const KvDocument::Section& s, const char* k) { return s.has(k) ? s.entry(k).line : s.line; };
  cfg.seed = static_cast<std::uint64_t>(ex.integer("seed", 0));
  cfg.runs = static_cast<int>(ex.integer("runs", 10));
  cfg.structures = ex.list("structures");
  if (ex.has("sides")) {
    cfg.sides.clear();
    for (auto& s : ex.list("sides")) cfg.sides.push_back(detail::as_config_error(line(ex, "sides"), [&] { return parse_side(s); }));
  }
  if (ex.has("modes")) {
    cfg.modes.clear();
    for (auto& m : ex.list("modes"))
      cfg.modes.push_back(detail::as_config_error(line(ex, "modes"), [&] { return parse_mask_mode(m); }));
  }
  cfg.schedule.kind = ex.str("schedule", "logsnr");
  cfg.schedule.timesteps = static_cast<int>(ex.integer("timesteps", 100));
  cfg.schedule.beta_1 = ex.num("beta_1", cfg.schedule.beta_1);
  cfg.schedule.beta_T = ex.num("beta_T", cfg.schedule.beta_T);
  cfg.repaint.jump_length = static_cast<int>(ex.integer("jump_length", 10));
  cfg.repaint.resamplings = static_cast<int>(ex.integer("resamplings", 5));
  if (ex.has("sigma_mode"))
    cfg.repaint.sigma_mode =
        detail::as_config_error(line(ex, "sigma_mode"), [&] { return parse_sigma_mode(ex.str("sigma_mode")); });
  const std::string kv = ex.str("known_variance", "previous");
  if (kv != "previous" && kv != "current") throw ConfigError("known_variance must be previous|current", line(ex, "known_variance"));
  cfg.repaint.known_variance = kv == "previous" ? KnownVariance::previous : KnownVariance::current;
  if (ex.has("out")) cfg.out = ex.str("out");

  auto regs = doc.sections("registration");
  if (regs.size() > 1) throw ConfigError("more than one [registration] section", regs[1]->line);
  if (!regs.empty()) {
    const auto& r = *regs.front();
    detail::reject_unknown(r, {"grid_spacing", "max_iterations", "initial_step", "tolerance", "bending_weight",
                               "elasticity_weight", "levels"});
    cfg.reg.spacing = r.num("grid_spacing", cfg.reg.spacing);
    cfg.reg.max_iterations = static_cast<int>(r.integer("max_iterations", cfg.reg.max_iterations));
    cfg.reg.initial_step = r.num("initial_step", cfg.reg.initial_step);
    cfg.reg.tolerance = r.num("tolerance", cfg.reg.tolerance);
    cfg.reg.bending_weight = r.num("bending_weight", 0.0);
    cfg.reg.elasticity_weight = r.num("elasticity_weight", 0.0);
    cfg.reg.levels = static_cast<int>(r.integer("levels", 1));
    detail::as_config_error(r.line, [&] { cfg.reg.validate(); return 0; });
  }

  auto models = doc.sections("model");
  if (models.size() > 1) throw ConfigError("more than one [model] section", models[1]->line);
  if (!models.empty()) {
    const auto& m = *models.front();
    detail::reject_unknown(m, {"kind", "components", "checkpoint"});
    cfg.model.kind = m.str("kind", "exact");
    if (cfg.model.kind != "exact" && cfg.model.kind != "mixture" && cfg.model.kind != "network")
      throw ConfigError("model kind must be exact|mixture|network", line(m, "kind"));
    cfg.model.components = static_cast<int>(m.integer("components", 64));
    if (cfg.model.kind == "network") {
      if (!m.has("checkpoint")) throw ConfigError("network model needs 'checkpoint'", m.line);
      cfg.model.checkpoint = base_dir / m.str("checkpoint");
    }
  }

  for (auto* sec : doc.sections("subject")) {
    if (sec->name.empty()) throw ConfigError("subject section needs a name", sec->line);
    if (sec->name.find_first_of("_/\\ ") != std::string::npos)
      throw ConfigError("subject name must not contain '_', '/' or spaces", sec->line);
    detail::reject_unknown(*sec, {"phantom", "seed", "image", "atlas"});
    for (auto& other : cfg.subjects)
      if (other.name == sec->name) throw ConfigError("duplicate subject '" + sec->name + "'", sec->line);
    SubjectSpec s;
    s.name = sec->name;
    s.line = sec->line;
    if (sec->has("phantom") == sec->has("image"))
      throw ConfigError("subject needs exactly one of 'phantom' or 'image'", sec->line);
    if (sec->has("phantom")) {
      const auto path = base_dir / sec->str("phantom");
      try {
        s.phantom = read_phantom_spec(path);
      } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what(), sec->entry("phantom").line);
      }
      if (sec->has("seed")) s.seed = static_cast<std::uint64_t>(sec->integer("seed"));
    } else {
      s.image = base_dir / sec->str("image");
      if (!sec->has("atlas")) throw ConfigError("image subject needs 'atlas'", sec->line);
      s.atlas_dir = base_dir / sec->str("atlas");
    }
    cfg.subjects.push_back(std::move(s));
  }
  for (auto& st : cfg.structures)
    if (st.find('_') != std::string::npos) throw ConfigError("structure name '" + st + "' must not contain '_'", line(ex, "structures"));
  return cfg;
}

inline ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(KvDocument::parse_file(path), path.parent_path());
}

struct PreparedSubject {
  std::string name;
  Image image;
  StructureAtlas atlas;
  std::shared_ptr<const Denoiser> model;
};

/// Loads or renders every subject, builds the models and checks every
/// (structure, side) the grid needs. All problems are collected and raised
/// together before anything runs.
inline std::vector<PreparedSubject> prepare_subjects(const ExperimentConfig& cfg) {
  std::vector<std::string> problems;
  std::vector<PreparedSubject> out;
  std::shared_ptr<const Denoiser> network;
  if (cfg.model.kind == "network") {
    try {
      network = std::make_shared<MlpDenoiser>(read_checkpoint(cfg.model.checkpoint));
    } catch (const std::exception& e) {
      problems.push_back(std::string("model: ") + e.what());
    }
  }
  for (auto& s : cfg.subjects) {
    PreparedSubject p;
    p.name = s.name;
    const std::string where = "subject '" + s.name + "': ";
    try {
      if (s.phantom) {
        Rng rng(s.seed.value_or(derive_seed(cfg.seed, {seed_tag("subject"), seed_tag(s.name)})));
        PhantomSample sample = generate(*s.phantom, rng);
        p.image = std::move(sample.image);
        p.atlas = std::move(sample.atlas);
        if (cfg.model.kind == "exact") {
          p.model = std::make_shared<AnalyticDenoiser>(exact_gaussian_from_spec(*s.phantom));
        } else if (cfg.model.kind == "mixture") {
          Rng mrng(derive_seed(cfg.seed, {seed_tag("mixture"), seed_tag(s.name)}));
          p.model = std::make_shared<AnalyticDenoiser>(gmm_from_spec(*s.phantom, cfg.model.components, mrng));
        }
      } else {
        p.image = read_image(s.image);
        p.atlas = StructureAtlas(p.image.width(), p.image.height());
        for (auto& st : cfg.structures)
          for (Side side : {Side::left, Side::right}) {
            const auto path = s.atlas_dir / (st + "_" + to_string(side) + ".f32grid");
            if (!std::filesystem::exists(path)) {
              problems.push_back(where + "missing atlas entry " + path.string());
              continue;
            }
            p.atlas.add(st, side, read_mask(path));
          }
        if (cfg.model.kind != "network") problems.push_back(where + "image subjects need a network model");
      }
      if (network) {
        const auto& net = static_cast<const MlpDenoiser&>(*network);
        if (net.width() != p.image.width() || net.height() != p.image.height())
          problems.push_back(where + "image size does not match the network");
        p.model = network;
      }
      for (auto& st : cfg.structures)
        for (Side side : {Side::left, Side::right})
          if (!p.atlas.contains(st, side) && s.phantom)
            problems.push_back(where + "no atlas entry for (" + st + ", " + to_string(side) + ")");
    } catch (const std::exception& e) {
      problems.push_back(where + e.what());
    }
    out.push_back(std::move(p));
  }
  if (!problems.empty()) {
    std::string msg = "experiment preflight failed:";
    for (auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return out;
}

struct Job {
  std::size_t subject = 0;
  CellKey key;
  int run = 0;
};

/// Subject, structure, side, mode, run order; the order of runs.csv.
inline std::vector<Job> job_grid(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  for (std::size_t sub = 0; sub < cfg.subjects.size(); ++sub)
    for (auto& st : cfg.structures)
      for (Side side : cfg.sides)
        for (MaskMode mode : cfg.modes)
          for (int i = 0; i < cfg.runs; ++i) jobs.push_back({sub, {cfg.subjects[sub].name, st, side, mode}, i});
  return jobs;
}

/// Worker count: `requested` if positive, else REPAINT_LAB_THREADS, else the
/// hardware concurrency.
inline unsigned resolve_jobs(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("REPAINT_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("REPAINT_LAB_THREADS must be a positive integer");
    return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {
inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

inline constexpr const char* kRunsHeader = "subject,structure,side,mode,run,mse,logj_mean,logj_std,fold_count,seed";
inline constexpr const char* kComparisonHeader =
    "subject,structure,side,delta_mse,var_ratio_intensity,logjstd_ratio,sign_p";

/// logj_mean/logj_std: mean and sample std over unfolded structure pixels;
/// nan when registration failed or no pixel remains.
inline void write_runs_csv(const std::vector<RunRecord>& records, std::ostream& os) {
  os << kRunsHeader << '\n';
  for (auto& r : records)
    os << r.key.subject << ',' << r.key.structure << ',' << to_string(r.key.side) << ',' << to_string(r.key.mode) << ','
       << r.run << ',' << detail::fmt_num(r.mse) << ',' << detail::fmt_num(r.logj_mean) << ','
       << detail::fmt_num(r.logj_std) << ',' << r.fold_count << ',' << r.seed << '\n';
}

inline std::vector<RunRecord> read_runs_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kRunsHeader) throw std::runtime_error("runs.csv: bad header");
  std::vector<RunRecord> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 10) throw std::runtime_error("runs.csv line " + std::to_string(lineno) + ": expected 10 fields");
    try {
      RunRecord r;
      r.key = {f[0], f[1], parse_side(f[2]), parse_mask_mode(f[3])};
      r.run = std::stoi(f[4]);
      r.mse = std::stod(f[5]);
      r.logj_mean = std::stod(f[6]);
      r.logj_std = std::stod(f[7]);
      r.fold_count = std::stoull(f[8]);
      r.seed = std::stoull(f[9]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("runs.csv line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& os) {
  os << kComparisonHeader << '\n';
  for (auto& r : rows)
    os << r.subject << ',' << r.structure << ',' << to_string(r.side) << ',' << detail::fmt_num(r.delta_mse) << ','
       << detail::fmt_num(r.var_ratio_intensity) << ',' << detail::fmt_num(r.logjstd_ratio) << ','
       << detail::fmt_num(r.sign_p) << '\n';
}

/// Output layout under one directory.
struct ReportLayout {
  std::filesystem::path root;
  std::filesystem::path runs_csv() const { return root / "runs.csv"; }
  std::filesystem::path comparison_csv() const { return root / "comparison.csv"; }
  std::filesystem::path partial_marker() const { return root / ".partial"; }
  std::filesystem::path map(const CellKey& k, const char* what) const {
    return root / "maps" / (k.stem() + "_" + what + ".f32grid");
  }
  std::filesystem::path run_map(const CellKey& k, int run, const char* what) const {
    return root / "runs" / (k.stem() + "_" + std::to_string(run) + "_" + what + ".f32grid");
  }
  std::filesystem::path subject_image(const std::string& subject) const {
    return root / "subjects" / (subject + "_image.f32grid");
  }
  std::filesystem::path structure_mask(const std::string& subject, const std::string& s, Side k) const {
    return root / "subjects" / (subject + "_" + s + "_" + to_string(k) + "_mask.f32grid");
  }
};

namespace detail {
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: '" + path.string() + "'");
}

inline void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + p.string() + "': " + ec.message());
}
}  // namespace detail

struct ReportSummary {
  std::vector<CellAggregate> cells;
  std::vector<ComparisonRow> comparisons;
  std::vector<std::string> notices;
};

/// Writes runs.csv, comparison.csv and the four maps of every cell. Output
/// depends only on the arguments, in their given order.
inline void emit_report(const std::vector<RunRecord>& records, const std::vector<CellAggregate>& cells,
                        const std::vector<ComparisonRow>& comparisons, const std::filesystem::path& outdir) {
  const ReportLayout L{outdir};
  detail::make_dirs(outdir);
  std::ostringstream rs, cs;
  write_runs_csv(records, rs);
  write_comparison_csv(comparisons, cs);
  detail::write_text(L.runs_csv(), rs.str());
  detail::write_text(L.comparison_csv(), cs.str());
  if (cells.empty()) return;
  detail::make_dirs(outdir / "maps");
  for (auto& c : cells) {
    write_image(c.imean, L.map(c.key, "imean"));
    write_image(c.istd, L.map(c.key, "istd"));
    write_image(c.jmean, L.map(c.key, "jmean"));
    write_image(c.jstd, L.map(c.key, "jstd"));
  }
}

namespace detail {
inline ReportSummary rebuild(const std::filesystem::path& outdir) {
  const ReportLayout L{outdir};
  std::ifstream is(L.runs_csv());
  if (!is) throw std::runtime_error("cannot open '" + L.runs_csv().string() + "'");
  std::vector<RunRecord> records = read_runs_csv(is);

  std::vector<CellKey> order;
  std::map<CellKey, std::vector<RunResult>> cells;
  for (auto& r : records) {
    auto [it, fresh] = cells.try_emplace(r.key);
    if (fresh) order.push_back(r.key);
    RunResult res;
    res.record = r;
    res.composed = read_image(L.run_map(r.key, r.run, "inpaint"));
    res.logj = read_image(L.run_map(r.key, r.run, "logj"));
    it->second.push_back(std::move(res));
  }

  ReportSummary sum;
  std::vector<RunRecord> all;
  for (auto& key : order) {
    auto& runs = cells[key];
    const BinaryMask structure = read_mask(L.structure_mask(key.subject, key.structure, key.side));
    std::vector<const RunResult*> ptrs;
    for (auto& r : runs) {
      r.record.structure_mean = structure.count() ? region_mean(r.composed, structure) : kNaN;
      ptrs.push_back(&r);
      all.push_back(r.record);
    }
    sum.cells.push_back(aggregate(ptrs, structure));
  }
  sum.comparisons = symmetry_comparison(sum.cells, all, &sum.notices);
  emit_report(records, sum.cells, sum.comparisons, outdir);
  return sum;
}
}  // namespace detail

/// Rebuilds aggregates and comparisons from runs.csv, the saved per-run maps
/// and subject masks, and rewrites the report. experiment ends with the same
/// step, so `report DIR` reproduces its outputs byte-for-byte.
inline ReportSummary rebuild_report(const std::filesystem::path& outdir) {
  if (std::filesystem::exists(ReportLayout{outdir}.partial_marker()))
    throw std::runtime_error("'" + outdir.string() + "' holds a partial experiment (.partial marker present)");
  return detail::rebuild(outdir);
}

struct ExperimentOutcome {
  std::vector<RunRecord> records;
  ReportSummary report;
  std::size_t degraded = 0;
};

/// Runs the whole grid on `workers` threads and writes the report. A
/// `.partial` marker sits in `outdir` until every output is written.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::vector<PreparedSubject>& subjects,
                                        const std::filesystem::path& outdir, unsigned workers) {
  const ReportLayout L{outdir};
  const std::vector<Job> jobs = job_grid(cfg);
  const NoiseSchedule sched = make_schedule(cfg.schedule);
  detail::make_dirs(outdir);
  detail::write_text(L.partial_marker(), "");
  detail::make_dirs(outdir / "runs");
  detail::make_dirs(outdir / "subjects");
  std::filesystem::remove(L.runs_csv());
  std::filesystem::remove(L.comparison_csv());

  for (std::size_t s = 0; s < subjects.size(); ++s) {
    write_image(subjects[s].image, L.subject_image(subjects[s].name));
    for (auto& st : cfg.structures)
      for (Side side : cfg.sides) write_mask(subjects[s].atlas.at(st, side), L.structure_mask(subjects[s].name, st, side));
  }

  std::vector<RunRecord> records(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const PreparedSubject& sub = subjects[job.subject];
    const CellContext ctx{sub.image, sub.atlas, *sub.model, sched, cfg.repaint, cfg.reg};
    RunResult r = run_once(ctx, job.key, job.run, run_seed(cfg.seed, job.key, job.run));
    write_image(r.composed, L.run_map(job.key, job.run, "inpaint"));
    write_image(r.logj, L.run_map(job.key, job.run, "logj"));
    records[j] = std::move(r.record);
  });

  ExperimentOutcome out;
  for (auto& r : records) out.degraded += r.degraded;
  std::ostringstream rs;
  write_runs_csv(records, rs);
  detail::write_text(L.runs_csv(), rs.str());
  out.report = detail::rebuild(outdir);
  std::filesystem::remove(L.partial_marker());
  out.records = std::move(records);
  return out;
}

}  // namespace repaint_lab
