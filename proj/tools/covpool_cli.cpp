// Command-line harness around the pooling library: gradient checks, toy
// training runs, truncation sweeps, eigenpair attribution maps, input
// perturbation, and pooled-spectrum histograms. Every command is seeded and
// writes byte-stable output: repeated runs with the same arguments produce
// identical files and identical stdout.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "covpool/covpool.hpp"

namespace {

using namespace covpool;

// Sentinel for "--t not given, fall back to the --split rule".
constexpr std::size_t kAutoSplit = static_cast<std::size_t>(-1);

struct RunOpts {
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 27;
  bool seb = false;
  std::string norm = "sqrt";
  int proot_order = 3;
  std::size_t epochs = 200;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double proj_weight_decay = 1e-4;
  double stem_lr_scale = 7e-4;
  double grad_clip = 5.0;
  std::size_t batch = 17;
  double k_eps = 1e-6;
  double ridge = 1e-8;
  std::size_t truncate = 0;  // 0 disables
  std::size_t d = 8;
  std::size_t snapshot_every = 10;
  bool relu = false;
  std::string model_in;  // load instead of training when set
};

void add_run_opts(CLI::App* cmd, RunOpts& o) {
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--data-seed", o.data_seed, "dataset seed");
  cmd->add_flag("--seb,!--no-seb", o.seb, "enable the scaling eigen branch");
  cmd->add_option("--norm", o.norm, "normalization: sqrt, proot, log")
      ->check(CLI::IsMember({"sqrt", "proot", "log"}));
  cmd->add_option("--proot-order", o.proot_order, "root order for --norm proot");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--momentum", o.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", o.weight_decay,
                  "L2 penalty on classifier weights");
  cmd->add_option("--proj-weight-decay", o.proj_weight_decay,
                  "L2 penalty on the stem projection");
  cmd->add_option("--stem-lr-scale", o.stem_lr_scale,
                  "stem lr multiplier relative to --lr");
  cmd->add_option("--grad-clip", o.grad_clip, "global gradient norm cap, 0 off");
  cmd->add_option("--batch", o.batch, "minibatch size");
  cmd->add_option("--k-eps", o.k_eps, "eigengap clamp in the eigen backward");
  cmd->add_option("--ridge", o.ridge, "diagonal loading on the covariance");
  cmd->add_option("--truncate", o.truncate,
                  "keep only the leading k eigenvalues, 0 off");
  cmd->add_option("--channels", o.d, "projected channel count");
  cmd->add_flag("--relu,!--no-relu", o.relu, "rectify the projected stem");
  cmd->add_option("--model", o.model_in, "load a saved model prefix");
}

GcpConfig gcp_config(const RunOpts& o) {
  GcpConfig cfg;
  cfg.use_seb = o.seb;
  if (o.norm == "proot")
    cfg.normalization = SpectralFn::proot(o.proot_order);
  else if (o.norm == "log")
    cfg.normalization = SpectralFn::log();
  else
    cfg.normalization = SpectralFn::sqrt();
  if (o.truncate > 0) cfg.truncate_k = o.truncate;
  cfg.k_epsilon = o.k_eps;
  cfg.ridge = o.ridge;
  validate_config(cfg);
  return cfg;
}

Dataset make_dataset(const RunOpts& o) {
  DatasetSpec spec;
  spec.seed = o.data_seed;
  return gen_dataset(spec);
}

TrainConfig train_config(const RunOpts& o) {
  TrainConfig tc;
  tc.gcp = gcp_config(o);
  tc.d = o.d;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.momentum = o.momentum;
  tc.weight_decay = o.weight_decay;
  tc.proj_weight_decay = o.proj_weight_decay;
  tc.stem_lr_scale = o.stem_lr_scale;
  tc.batch_size = o.batch;
  tc.grad_clip = o.grad_clip;
  tc.snapshot_every = o.snapshot_every;
  tc.with_relu = o.relu;
  tc.seed = o.seed;
  return tc;
}

void save_model(const std::string& prefix, const ToyModel& m) {
  write_spm1(prefix + ".proj.spm1", m.proj);
  write_spm1(prefix + ".w.spm1", m.w);
  Mat b(1, m.b.size());
  for (std::size_t i = 0; i < m.b.size(); ++i) b(0, i) = m.b[i];
  write_spm1(prefix + ".b.spm1", b);
}

ToyModel load_model(const std::string& prefix) {
  ToyModel m;
  m.proj = read_spm1(prefix + ".proj.spm1");
  m.w = read_spm1(prefix + ".w.spm1");
  const Mat b = read_spm1(prefix + ".b.spm1");
  m.b.assign(b.a.begin(), b.a.end());
  return m;
}

// Model for the inference-side commands: a saved prefix when given,
// otherwise a fresh deterministic training run. The stem flag is not
// serialized, so --relu must match the run that produced a saved model.
ToyModel obtain_model(const RunOpts& o, const Dataset& data) {
  ToyModel m = !o.model_in.empty() ? load_model(o.model_in)
                                   : train(data, nullptr, train_config(o)).model;
  m.with_relu = o.relu;
  return m;
}

int cmd_gradcheck(const std::string& op_name, std::size_t trials,
                  std::uint64_t seed, const std::string& out) {
  std::vector<GradOp> ops;
  if (op_name == "all")
    ops = all_grad_ops();
  else
    ops.push_back(parse_grad_op(op_name));

  std::unique_ptr<CsvWriter> csv;
  if (!out.empty()) {
    csv = std::make_unique<CsvWriter>(out);
    csv->row({"op", "trial", "max_rel_err", "pass"});
  }

  bool all_pass = true;
  for (GradOp op : ops) {
    const std::vector<GradTrial> rows = run_gradcheck(op, trials, seed);
    double worst = 0.0;
    for (const GradTrial& r : rows) {
      worst = std::max(worst, r.max_rel_err);
      all_pass = all_pass && r.pass;
      if (csv)
        csv->row({grad_op_name(op), std::to_string(r.trial),
                  fmt_num(r.max_rel_err), r.pass ? "1" : "0"});
    }
    std::printf("%-14s worst %-12s tol %-8s %s\n", grad_op_name(op),
                fmt_num(worst).c_str(), fmt_num(grad_op_tol(op)).c_str(),
                worst <= grad_op_tol(op) ? "PASS" : "FAIL");
  }
  std::printf("gradcheck: %s\n", all_pass ? "PASS" : "FAIL");
  return all_pass ? 0 : 1;
}

int cmd_train(const RunOpts& o, const std::string& out,
              const std::string& model_out) {
  const Dataset data = make_dataset(o);
  const TrainReport rep = train(data, nullptr, train_config(o));

  if (!out.empty()) {
    CsvWriter csv(out);
    csv.row({"epoch", "loss", "train_acc"});
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
      csv.row({std::to_string(e), fmt_num(rep.epoch_loss[e]),
               fmt_num(rep.train_acc[e])});
  }
  if (!model_out.empty()) save_model(model_out, rep.model);

  for (const SpectrumSnapshot& s : rep.snapshots)
    std::printf("epoch %-4zu loss %-22s acc %-8s median_kappa %s\n", s.epoch,
                fmt_num(rep.epoch_loss[s.epoch]).c_str(),
                fmt_num(rep.train_acc[s.epoch]).c_str(),
                fmt_num(s.median_kappa).c_str());
  std::printf("final train_acc %s\n", fmt_num(rep.train_acc.back()).c_str());
  return 0;
}

int cmd_sweep(const RunOpts& o, std::vector<std::size_t> ks,
              const std::string& mode_name, const std::string& out) {
  const Dataset data = make_dataset(o);
  const ToyModel model = obtain_model(o, data);
  const SubsetMode mode = mode_name == "first-plus-small"
                              ? SubsetMode::FirstPlusSmall
                              : SubsetMode::TopK;
  if (ks.empty())
    for (std::size_t k = 1; k <= model.proj.rows; ++k) ks.push_back(k);

  GcpConfig cfg = gcp_config(o);
  cfg.truncate_k.reset();  // the sweep applies its own masks
  const std::vector<SweepRow> rows =
      truncation_sweep(model, data, cfg, ks, mode);

  std::unique_ptr<CsvWriter> csv;
  if (!out.empty()) {
    csv = std::make_unique<CsvWriter>(out);
    csv->row({"k", "mode", "acc"});
  }
  for (const SweepRow& r : rows) {
    if (csv) csv->row({std::to_string(r.k), mode_name, fmt_num(r.acc)});
    std::printf("k %-3zu mode %-16s acc %s\n", r.k, mode_name.c_str(),
                fmt_num(r.acc).c_str());
  }
  return 0;
}

// --t overrides; otherwise "ratio" keeps the leading 80% large and "energy"
// puts the split where the trailing eigenvalues drop below 0.1% of the trace.
std::size_t resolve_split(std::size_t t, const std::string& split,
                          const ToyModel& model, const Mat& x,
                          const GcpConfig& cfg) {
  if (t != kAutoSplit) return t;
  if (split == "energy") {
    const ModelCache mc = model_forward(model, x, cfg);
    return energy_split(mc.gcp.lambda_used);
  }
  return ratio_split(model.proj.rows);
}

int cmd_attribute(const RunOpts& o, std::size_t sample,
                  const std::string& mode, const std::string& rule,
                  std::size_t t, const std::string& split,
                  const std::string& out, const std::string& raw_out) {
  const Dataset data = make_dataset(o);
  if (sample >= data.samples.size())
    throw std::invalid_argument("attribute: sample index out of range");
  const ToyModel model = obtain_model(o, data);

  const EigSelection sel = mode == "large"   ? EigSelection::Large
                           : mode == "small" ? EigSelection::Small
                                             : EigSelection::All;
  SaliencyOptions opt;
  opt.rule = rule == "vanilla" ? ReluRule::Vanilla : ReluRule::DeConv;

  GcpConfig cfg = gcp_config(o);
  t = resolve_split(t, split, model, data.samples[sample], cfg);
  const SaliencyMap map =
      eigen_saliency(model, data.samples[sample], cfg, sel, t, opt);
  if (!out.empty()) write_pgm(out, map.values);
  if (!raw_out.empty()) write_spm1(raw_out, map.values);
  std::printf("sample %zu label %zu seed_class %zu sel %s rule %s t %zu\n",
              sample, data.labels[sample], map.seed_class,
              selection_name(sel), rule.c_str(), t);
  std::printf("map max %s mean %s\n", fmt_num(max_abs(map.values)).c_str(),
              fmt_num(fro_inner(map.values, Mat(map.values.rows,
                                                map.values.cols, 1.0)) /
                      static_cast<double>(map.values.a.size()))
                  .c_str());
  return 0;
}

int cmd_perturb(const RunOpts& o, std::size_t sample, const std::string& mode,
                std::size_t steps, double lr, std::size_t t,
                const std::string& split, const std::string& out,
                const std::string& image_out) {
  const Dataset data = make_dataset(o);
  if (sample >= data.samples.size())
    throw std::invalid_argument("perturb: sample index out of range");
  const ToyModel model = obtain_model(o, data);
  const PerturbMode pm = mode == "l2" ? PerturbMode::L2 : PerturbMode::L1;

  t = resolve_split(t, split, model, data.samples[sample], gcp_config(o));
  const PerturbTrace tr = perturb(model, data.samples[sample], t, pm, steps, lr);
  if (!out.empty()) {
    CsvWriter csv(out);
    csv.row({"step", "loss"});
    for (std::size_t i = 0; i < tr.loss_history.size(); ++i)
      csv.row({std::to_string(i), fmt_num(tr.loss_history[i])});
  }
  if (!image_out.empty()) write_pgm(image_out, tr.image);
  std::printf("perturb %s sample %zu first %s last %s\n", mode.c_str(), sample,
              fmt_num(tr.loss_history.front()).c_str(),
              fmt_num(tr.loss_history.back()).c_str());
  return 0;
}

int cmd_spectrum(const RunOpts& o, std::size_t bins, const std::string& out) {
  const Dataset data = make_dataset(o);
  const ToyModel model = obtain_model(o, data);
  const GcpConfig cfg = gcp_config(o);

  std::vector<std::vector<double>> spectra;
  accuracy(model, data, cfg, &spectra);
  const SpectrumHistogram h = spectrum_histogram(spectra, bins);

  std::vector<double> kappas;
  kappas.reserve(spectra.size());
  for (const auto& sp : spectra)
    kappas.push_back(condition_number(sp).value);

  if (!out.empty()) {
    CsvWriter csv(out);
    csv.row({"bin_lo", "bin_hi", "count"});
    for (std::size_t j = 0; j < h.counts.size(); ++j)
      csv.row({fmt_num(h.edges[j]), fmt_num(h.edges[j + 1]),
               std::to_string(h.counts[j])});
  }
  for (std::size_t j = 0; j < h.counts.size(); ++j)
    std::printf("bin [%s, %s] count %zu\n", fmt_num(h.edges[j]).c_str(),
                fmt_num(h.edges[j + 1]).c_str(), h.counts[j]);
  std::printf("median_kappa %s\n",
              fmt_num(covpool::detail::median_of(kappas)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Covariance pooling toolkit: gradient checks, toy training, eigenpair "
      "attribution, and spectrum diagnostics"};
  app.require_subcommand(1);

  // gradcheck
  std::string gc_op = "all";
  std::size_t gc_trials = 10;
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  CLI::App* gc = app.add_subcommand(
      "gradcheck", "compare analytic gradients with central differences");
  gc->add_option("--op", gc_op,
                 "covariance, mat_fn_sqrt, mat_fn_proot, mat_fn_log, "
                 "mat_fn_exp_inv, eig, seb_factor, gcp, gcp_seb, gcp_trunc, "
                 "model, or all");
  gc->add_option("--trials", gc_trials, "random trials per op");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--out", gc_out, "CSV report path");

  // train
  RunOpts tr_o;
  std::string tr_out, tr_model_out;
  CLI::App* tr = app.add_subcommand("train", "train the toy classifier");
  add_run_opts(tr, tr_o);
  tr->add_option("--out", tr_out, "per-epoch CSV path");
  tr->add_option("--model-out", tr_model_out, "save trained model prefix");

  // sweep
  RunOpts sw_o;
  std::vector<std::size_t> sw_ks;
  std::string sw_mode = "top", sw_out;
  CLI::App* sw = app.add_subcommand(
      "sweep", "inference accuracy over eigenvalue subsets");
  add_run_opts(sw, sw_o);
  sw->add_option("--ks", sw_ks, "subset sizes, comma separated")
      ->delimiter(',');
  sw->add_option("--subset-mode", sw_mode, "top or first-plus-small")
      ->check(CLI::IsMember({"top", "first-plus-small"}));
  sw->add_option("--out", sw_out, "CSV path");

  // attribute
  RunOpts at_o;
  std::size_t at_sample = 0, at_t = kAutoSplit;
  std::string at_mode = "small", at_rule = "deconv", at_split = "ratio";
  std::string at_out, at_raw;
  CLI::App* at = app.add_subcommand(
      "attribute", "eigenpair-routed saliency map for one sample");
  add_run_opts(at, at_o);
  at->add_option("--sample", at_sample, "dataset sample index");
  at->add_option("--mode", at_mode, "large, small, or all")
      ->check(CLI::IsMember({"large", "small", "all"}));
  at->add_option("--rule", at_rule, "vanilla or deconv")
      ->check(CLI::IsMember({"vanilla", "deconv"}));
  at->add_option("--split", at_split,
                 "split rule: ratio (leading 80% large) or energy "
                 "(trailing < 0.1% of trace small)")
      ->check(CLI::IsMember({"ratio", "energy"}));
  at->add_option("--t", at_t,
                 "explicit split index: large = [0, t), small = [t, d); "
                 "overrides --split");
  at->add_option("--out", at_out, "PGM image path");
  at->add_option("--raw", at_raw, "raw map SPM1 path");

  // perturb
  RunOpts pe_o;
  std::size_t pe_sample = 0, pe_steps = 1000, pe_t = kAutoSplit;
  double pe_lr = 0.1;
  std::string pe_mode = "l1", pe_split = "ratio", pe_out, pe_image;
  CLI::App* pe = app.add_subcommand(
      "perturb", "gradient descent on the input against a subspace loss");
  add_run_opts(pe, pe_o);
  pe->add_option("--sample", pe_sample, "dataset sample index");
  pe->add_option("--mode", pe_mode, "l1 or l2")
      ->check(CLI::IsMember({"l1", "l2"}));
  pe->add_option("--steps", pe_steps, "descent steps");
  pe->add_option("--step-lr", pe_lr, "descent step size");
  pe->add_option("--split", pe_split, "split rule: ratio or energy")
      ->check(CLI::IsMember({"ratio", "energy"}));
  pe->add_option("--t", pe_t,
                 "explicit split index for the subspace targets; "
                 "overrides --split");
  pe->add_option("--out", pe_out, "loss history CSV path");
  pe->add_option("--image", pe_image, "final input PGM path");

  // spectrum
  RunOpts sp_o;
  std::size_t sp_bins = 12;
  std::string sp_out;
  CLI::App* sp = app.add_subcommand(
      "spectrum", "pooled eigenvalue histogram over the dataset");
  add_run_opts(sp, sp_o);
  sp->add_option("--bins", sp_bins, "log-spaced bins");
  sp->add_option("--out", sp_out, "CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gc->parsed()) return cmd_gradcheck(gc_op, gc_trials, gc_seed, gc_out);
    if (tr->parsed()) return cmd_train(tr_o, tr_out, tr_model_out);
    if (sw->parsed()) return cmd_sweep(sw_o, sw_ks, sw_mode, sw_out);
    if (at->parsed())
      return cmd_attribute(at_o, at_sample, at_mode, at_rule, at_t, at_split,
                           at_out, at_raw);
    if (pe->parsed())
      return cmd_perturb(pe_o, pe_sample, pe_mode, pe_steps, pe_lr, pe_t,
                         pe_split, pe_out, pe_image);
    if (sp->parsed()) return cmd_spectrum(sp_o, sp_bins, sp_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
