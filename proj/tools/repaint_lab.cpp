#include <CLI11.hpp>

#include <cstdint>
#include <limits>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "repaint_lab/bspline.hpp"
#include "repaint_lab/experiment.hpp"
#include "repaint_lab/gmm.hpp"
#include "repaint_lab/harness.hpp"
#include "repaint_lab/image_io.hpp"
#include "repaint_lab/mlp_denoiser.hpp"
#include "repaint_lab/phantom.hpp"
#include "repaint_lab/registration.hpp"
#include "repaint_lab/repaint.hpp"
#include "repaint_lab/trainer.hpp"

namespace fs = std::filesystem;
using namespace repaint_lab;

namespace {

// Usage or configuration problem detected before any output is written.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool verbose = false;

void note(const std::string& msg) {
  if (verbose) std::cerr << msg << '\n';
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + p.string() + "': " + ec.message());
}

std::string indexed(const std::string& stem, std::size_t i) { return stem + "_" + std::to_string(i) + ".f32grid"; }

struct ModelFlags {
  std::string kind = "exact";
  std::string phantom;
  std::string checkpoint;
  int components = 64;

  void add(CLI::App* cmd) {
    cmd->add_option("--model", kind, "exact | mixture | network")
        ->check(CLI::IsMember({"exact", "mixture", "network"}))
        ->capture_default_str();
    cmd->add_option("--phantom", phantom, "phantom spec for exact / mixture models");
    cmd->add_option("--checkpoint", checkpoint, "network checkpoint (.dnsr)");
    cmd->add_option("--components", components, "mixture components")->check(CLI::PositiveNumber)->capture_default_str();
  }

  std::unique_ptr<Denoiser> load(std::uint64_t seed) const {
    if (kind == "network") {
      if (checkpoint.empty()) throw UsageError("--model network needs --checkpoint");
      return std::make_unique<MlpDenoiser>(read_checkpoint(checkpoint));
    }
    if (phantom.empty()) throw UsageError("--model " + kind + " needs --phantom");
    const PhantomSpec spec = read_phantom_spec(phantom);
    if (kind == "exact") return std::make_unique<AnalyticDenoiser>(exact_gaussian_from_spec(spec));
    Rng rng(derive_seed(seed, {seed_tag("mixture")}));
    return std::make_unique<AnalyticDenoiser>(gmm_from_spec(spec, components, rng));
  }
};

struct ScheduleFlags {
  ScheduleConfig cfg;
  std::string sigma = "tilde";

  void add(CLI::App* cmd) {
    cmd->add_option("--timesteps", cfg.timesteps, "diffusion steps T")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--schedule", cfg.kind, "logsnr | linear")->check(CLI::IsMember({"logsnr", "linear"}))->capture_default_str();
    cmd->add_option("--sigma-mode", sigma, "tilde | beta | zero")->check(CLI::IsMember({"tilde", "beta", "zero"}))->capture_default_str();
  }
};

void check_model_shape(const Denoiser& model, std::size_t w, std::size_t h) {
  if (auto* net = dynamic_cast<const MlpDenoiser*>(&model))
    if (net->width() != w || net->height() != h) throw UsageError("image size does not match the network");
  if (auto* an = dynamic_cast<const AnalyticDenoiser*>(&model)) {
    const Image m = an->data_model().population_mean();
    if (m.width() != w || m.height() != h) throw UsageError("image size does not match the phantom model");
  }
}

struct PhantomCmd {
  std::string spec;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  std::string out;
  bool pgm = false;

  int run() const {
    const PhantomSpec ps = read_phantom_spec(spec);
    if (count == 0) return 0;
    make_dir(fs::path(out) / "atlas");
    const StructureAtlas atlas = ps.atlas();
    for (auto& [key, mask] : atlas.entries())
      write_mask(mask, fs::path(out) / "atlas" / (key.first + "_" + to_string(key.second) + ".f32grid"));
    std::ostringstream latents;
    latents << "sample,seed,structure,left,right\n";
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t s = derive_seed(seed, {i});
      Rng rng(s);
      const PhantomSample sample = generate(ps, rng);
      write_image(sample.image, fs::path(out) / indexed("sample", i));
      if (pgm) write_pgm(sample.image, fs::path(out) / ("sample_" + std::to_string(i) + ".pgm"));
      for (auto& [name, lr] : sample.latents)
        latents << i << ',' << s << ',' << name << ',' << detail::fmt_num(lr.first) << ',' << detail::fmt_num(lr.second)
                << '\n';
    }
    detail::write_text(fs::path(out) / "latents.csv", latents.str());
    std::cout << "wrote " << count << " phantom samples to " << out << '\n';
    return 0;
  }
};

struct TrainCmd {
  std::string phantom;
  std::vector<std::string> data;
  std::size_t samples = 256;
  std::size_t hidden = 128;
  std::size_t embed = 16;
  TrainConfig cfg;
  ScheduleFlags sched;
  std::uint64_t seed = 0;
  std::string out;

  int run() {
    if (phantom.empty() == data.empty()) throw UsageError("train needs exactly one of --phantom or --data");
    if (embed % 2 != 0) throw UsageError("--embed must be even");
    std::vector<Image> images;
    if (!phantom.empty()) {
      const PhantomSpec ps = read_phantom_spec(phantom);
      Rng rng(derive_seed(seed, {seed_tag("data")}));
      for (std::size_t i = 0; i < samples; ++i) images.push_back(generate(ps, rng).image);
    } else {
      for (auto& p : data) images.push_back(read_image(p));
    }
    for (auto& im : images)
      if (!im.same_shape(images.front())) throw UsageError("training images differ in size");
    cfg.seed = derive_seed(seed, {seed_tag("train")});
    cfg.horizon = cfg.max_steps;
    cfg.epochs = std::numeric_limits<int>::max();
    cfg.validate();
    const NoiseSchedule ns = make_schedule(sched.cfg);
    MlpDenoiser net(images.front().width(), images.front().height(), hidden, embed);
    Rng init(derive_seed(seed, {seed_tag("init")}));
    net.initialize(init);
    make_dir(out);
    const auto trace = train(net, images, cfg, ns);
    write_checkpoint(net, fs::path(out) / "model.dnsr");
    std::ostringstream os;
    write_loss_trace(trace, os);
    detail::write_text(fs::path(out) / "loss.csv", os.str());
    const std::size_t per_epoch = std::max<std::size_t>(
        1, (images.size() + static_cast<std::size_t>(cfg.micro_batch * cfg.accumulation) - 1) /
               static_cast<std::size_t>(cfg.micro_batch * cfg.accumulation));
    const std::size_t k = std::min(per_epoch, trace.size());
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      first += trace[i].loss / static_cast<double>(k);
      last += trace[trace.size() - 1 - i].loss / static_cast<double>(k);
    }
    std::cout << "steps=" << trace.size() << " first_epoch_loss=" << detail::fmt_num(first)
              << " last_epoch_loss=" << detail::fmt_num(last) << '\n';
    return 0;
  }
};

struct SampleCmd {
  ModelFlags model;
  ScheduleFlags sched;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  std::string out;

  int run() const {
    const auto m = model.load(seed);
    std::size_t w = 0, h = 0;
    if (auto* net = dynamic_cast<const MlpDenoiser*>(m.get())) {
      w = net->width();
      h = net->height();
    } else if (auto* an = dynamic_cast<const AnalyticDenoiser*>(m.get())) {
      const Image mean = an->data_model().population_mean();
      w = mean.width();
      h = mean.height();
    }
    const NoiseSchedule ns = make_schedule(sched.cfg);
    const SigmaMode mode = parse_sigma_mode(sched.sigma);
    if (count == 0) return 0;
    make_dir(out);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, {i}));
      write_image(sample_unconditional(w, h, *m, ns, mode, rng), fs::path(out) / indexed("sample", i));
    }
    std::cout << "wrote " << count << " samples to " << out << '\n';
    return 0;
  }
};

struct InpaintCmd {
  std::string image, mask;
  ModelFlags model;
  ScheduleFlags sched;
  RepaintConfig rc;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  std::string out;

  int run() {
    const Image I0 = read_image(image);
    const BinaryMask known = read_mask(mask);
    if (!known.same_shape(I0)) throw UsageError("mask size differs from image");
    const auto m = model.load(seed);
    check_model_shape(*m, I0.width(), I0.height());
    const NoiseSchedule ns = make_schedule(sched.cfg);
    rc.sigma_mode = parse_sigma_mode(sched.sigma);
    try {
      rc.validate(ns.T());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (count == 0) return 0;
    make_dir(out);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, {i}));
      write_image(inpaint(I0, known, *m, ns, rc, rng), fs::path(out) / indexed("inpaint", i));
    }
    std::cout << "wrote " << count << " inpaintings to " << out << '\n';
    return 0;
  }
};

struct RegisterCmd {
  std::string ref, mov;
  RegParams params;
  std::string out;

  int run() const {
    const Image r = read_image(ref), m = read_image(mov);
    if (!r.same_shape(m)) throw UsageError("reference and moving images differ in size");
    try {
      params.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const RegistrationResult res = register_images(r, m, params);
    const LogJacMap lj = log_jacobian(res.field, r.width(), r.height());
    make_dir(out);
    write_field(res.field, fs::path(out) / "field.bspf");
    write_image(lj.log_det, fs::path(out) / "logj.f32grid");
    write_mask(lj.folding, fs::path(out) / "folding.f32grid");
    std::cout << "initial_ssd=" << detail::fmt_num(res.initial_ssd) << " final_ssd=" << detail::fmt_num(res.final_ssd)
              << " iterations=" << res.iterations << " folds=" << lj.fold_count()
              << " spacing=" << detail::fmt_num(params.spacing) << '\n';
    return 0;
  }
};

void print_comparison(const ReportSummary& rep) {
  for (auto& n : rep.notices) std::cerr << "notice: " << n << '\n';
  for (auto& c : rep.comparisons)
    std::cout << c.subject << ' ' << c.structure << ' ' << to_string(c.side) << ": delta_mse=" << detail::fmt_num(c.delta_mse)
              << " var_ratio=" << detail::fmt_num(c.var_ratio_intensity) << " logjstd_ratio=" << detail::fmt_num(c.logjstd_ratio)
              << " sign_p=" << detail::fmt_num(c.sign_p) << " (" << c.wins << "/" << c.pairs << ")\n";
}

struct ExperimentCmd {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 0;
  int timesteps = 0, jump_length = 0, resamplings = 0, runs = 0;
  double grid_spacing = 0.0;
  std::string mode;
  bool dry_run = false;
  CLI::App* cmd = nullptr;

  int run() const {
    ExperimentConfig cfg = read_experiment_config(config);
    if (cmd->count("--seed")) cfg.seed = seed;
    if (cmd->count("--out")) cfg.out = out;
    if (cmd->count("--timesteps")) cfg.schedule.timesteps = timesteps;
    if (cmd->count("--jump-length")) cfg.repaint.jump_length = jump_length;
    if (cmd->count("--resamplings")) cfg.repaint.resamplings = resamplings;
    if (cmd->count("--grid-spacing")) cfg.reg.spacing = grid_spacing;
    if (cmd->count("--runs")) cfg.runs = runs;
    if (cmd->count("--mode")) {
      cfg.modes.clear();
      if (mode != "bilateral") cfg.modes.push_back(MaskMode::baseline);
      if (mode != "baseline") cfg.modes.push_back(MaskMode::bilateral);
    }
    cfg.validate();
    const unsigned workers = resolve_jobs(jobs);
    const auto subjects = prepare_subjects(cfg);
    const auto grid = job_grid(cfg);
    if (dry_run) {
      std::cout << "subject,structure,side,mode,run,seed\n";
      for (auto& j : grid)
        std::cout << j.key.subject << ',' << j.key.structure << ',' << to_string(j.key.side) << ','
                  << to_string(j.key.mode) << ',' << j.run << ',' << run_seed(cfg.seed, j.key, j.run) << '\n';
      std::cerr << grid.size() << " jobs, nothing written\n";
      return 0;
    }
    note(std::to_string(grid.size()) + " jobs on " + std::to_string(workers) + " workers");
    const ExperimentOutcome res = run_experiment(cfg, subjects, cfg.out, workers);
    if (res.degraded) std::cerr << res.degraded << " runs degraded (registration failed)\n";
    print_comparison(res.report);
    std::cout << "wrote " << res.records.size() << " runs to " << cfg.out.string() << '\n';
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilateral-symmetry inpainting lab"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  PhantomCmd ph;
  auto* c_ph = app.add_subcommand("phantom", "render phantom samples and the atlas");
  c_ph->add_option("spec", ph.spec, "phantom spec file")->required();
  c_ph->add_option("--count", ph.count, "number of samples")->capture_default_str();
  c_ph->add_option("--seed", ph.seed, "master seed")->capture_default_str();
  c_ph->add_option("--out", ph.out, "output directory")->required();
  c_ph->add_flag("--pgm", ph.pgm, "also write 16-bit PGM previews");

  TrainCmd tr;
  tr.cfg.max_steps = 5000;
  auto* c_tr = app.add_subcommand("train", "train the MLP denoiser");
  c_tr->add_option("--phantom", tr.phantom, "draw training images from this phantom spec");
  c_tr->add_option("--samples", tr.samples, "phantom training images")->capture_default_str();
  c_tr->add_option("--data", tr.data, "training images (.f32grid)");
  c_tr->add_option("--hidden", tr.hidden, "hidden units")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--embed", tr.embed, "timestep embedding size (even)")->capture_default_str();
  c_tr->add_option("--steps", tr.cfg.max_steps, "optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--lr", tr.cfg.lr, "initial learning rate")->capture_default_str();
  c_tr->add_option("--lr-min", tr.cfg.lr_min, "final learning rate")->capture_default_str();
  c_tr->add_option("--micro-batch", tr.cfg.micro_batch, "samples per micro-batch")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--accumulation", tr.cfg.accumulation, "micro-batches per step")->check(CLI::PositiveNumber)->capture_default_str();
  c_tr->add_option("--optimizer", tr.cfg.optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  tr.sched.add(c_tr);
  c_tr->add_option("--seed", tr.seed, "master seed")->capture_default_str();
  c_tr->add_option("--out", tr.out, "output directory")->required();

  SampleCmd sa;
  auto* c_sa = app.add_subcommand("sample", "unconditional samples");
  sa.model.add(c_sa);
  sa.sched.add(c_sa);
  c_sa->add_option("--count", sa.count, "number of samples")->capture_default_str();
  c_sa->add_option("--seed", sa.seed, "master seed")->capture_default_str();
  c_sa->add_option("--out", sa.out, "output directory")->required();

  InpaintCmd in;
  auto* c_in = app.add_subcommand("inpaint", "masked-conditional sampling");
  c_in->add_option("image", in.image, "image (.f32grid)")->required();
  c_in->add_option("mask", in.mask, "known-region mask (.f32grid, 1 = known)")->required();
  in.model.add(c_in);
  in.sched.add(c_in);
  c_in->add_option("--jump-length", in.rc.jump_length, "jump length j")->capture_default_str();
  c_in->add_option("--resamplings", in.rc.resamplings, "resamplings r")->capture_default_str();
  c_in->add_option("--count", in.count, "number of inpaintings")->capture_default_str();
  c_in->add_option("--seed", in.seed, "master seed")->capture_default_str();
  c_in->add_option("--out", in.out, "output directory")->required();

  RegisterCmd rg;
  auto* c_rg = app.add_subcommand("register", "B-spline registration");
  c_rg->add_option("reference", rg.ref, "reference image (.f32grid)")->required();
  c_rg->add_option("moving", rg.mov, "moving image (.f32grid)")->required();
  c_rg->add_option("--grid-spacing", rg.params.spacing, "control spacing in pixels")->capture_default_str();
  c_rg->add_option("--max-iterations", rg.params.max_iterations, "iteration cap")->capture_default_str();
  c_rg->add_option("--bending-weight", rg.params.bending_weight, "bending penalty")->capture_default_str();
  c_rg->add_option("--elasticity-weight", rg.params.elasticity_weight, "elastic penalty")->capture_default_str();
  c_rg->add_option("--out", rg.out, "output directory")->required();

  ExperimentCmd ex;
  auto* c_ex = app.add_subcommand("experiment", "run the structure x side x mode x run grid");
  ex.cmd = c_ex;
  c_ex->add_option("config", ex.config, "experiment config")->required();
  c_ex->add_option("--seed", ex.seed, "master seed (overrides config)");
  c_ex->add_option("--out", ex.out, "output directory (overrides config)");
  c_ex->add_option("--jobs", ex.jobs, "worker threads (default REPAINT_LAB_THREADS or all cores)")->check(CLI::PositiveNumber);
  c_ex->add_option("--timesteps", ex.timesteps, "diffusion steps T")->check(CLI::PositiveNumber);
  c_ex->add_option("--jump-length", ex.jump_length, "jump length j")->check(CLI::PositiveNumber);
  c_ex->add_option("--resamplings", ex.resamplings, "resamplings r")->check(CLI::PositiveNumber);
  c_ex->add_option("--grid-spacing", ex.grid_spacing, "registration control spacing")->check(CLI::PositiveNumber);
  c_ex->add_option("--runs", ex.runs, "runs per cell")->check(CLI::PositiveNumber);
  c_ex->add_option("--mode", ex.mode, "baseline | bilateral | both")->check(CLI::IsMember({"baseline", "bilateral", "both"}));
  c_ex->add_flag("--dry-run", ex.dry_run, "print the job grid and exit");

  std::string report_dir;
  auto* c_rp = app.add_subcommand("report", "rebuild maps and comparison.csv from a finished experiment");
  c_rp->add_option("dir", report_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_ph) return ph.run();
    if (*c_tr) return tr.run();
    if (*c_sa) return sa.run();
    if (*c_in) return in.run();
    if (*c_rg) return rg.run();
    if (*c_ex) return ex.run();
    if (*c_rp) {
      print_comparison(rebuild_report(report_dir));
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
