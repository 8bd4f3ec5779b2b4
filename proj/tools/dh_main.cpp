#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dh/config.hpp"
#include "dh/image_io.hpp"
#include "dh/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json metrics_json(const dh::MetricsReport& r) {
  return ordered_json{{"abse", r.abse},   {"rmse", r.rmse},
                      {"absr", r.absr},   {"sqr", r.sqr},
                      {"delta", r.delta}, {"n_pixels", r.n_pixels},
                      {"region", r.region}};
}

ordered_json attack_json(const dh::AttackReport& r) {
  return ordered_json{{"kind", r.kind},
                      {"epsilon", r.epsilon},
                      {"steps", r.steps},
                      {"final_adv_loss", r.final_adv_loss},
                      {"final_pixel_norm", r.final_pixel_norm},
                      {"perturbed_fraction", r.perturbed_fraction},
                      {"per_step_loss", r.per_step_loss}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw dh::FormatError("cannot open for writing: " + path.string());
  f << text;
}

int cmd_synthesize(const std::string& config_path, const std::string& out_dir,
                   int64_t n, uint64_t seed_override, bool has_seed) {
  dh::ExperimentConfig cfg = dh::load_experiment_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  const dh::Experiment exp = dh::build_experiment(cfg);
  // All scenes are drawn before anything lands on disk.
  dh::Rng rng(dh::Rng::mix(cfg.seed, 0x57a9e));
  std::vector<dh::Scene> scenes;
  for (int64_t i = 0; i < n; ++i)
    scenes.push_back(dh::draw_scene(exp.train_pool, cfg.camera, rng));

  fs::create_directories(out_dir);
  ordered_json placements = ordered_json::array();
  for (int64_t i = 0; i < n; ++i) {
    const dh::Scene& s = scenes[static_cast<size_t>(i)];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene_%03d", static_cast<int>(i));
    const fs::path base = fs::path(out_dir) / stem;
    dh::write_png_rgb(base.string() + "_t.png", s.image_t);
    dh::write_png_rgb(base.string() + "_s.png", s.image_s);
    dh::write_png_gray(base.string() + "_region_t.png", s.plan_t.region);
    dh::write_png_gray(base.string() + "_region_s.png", s.plan_s.region);
    const double deg = s.draw.alpha * 180.0 / M_PI;
    std::cout << stem << ": bg=" << s.draw.bg_index
              << " board=" << s.draw.board_index << " z_c=" << s.draw.z_c
              << " alpha_deg=" << deg << "\n";
    placements.push_back(ordered_json{{"scene", i},
                                      {"bg", s.draw.bg_index},
                                      {"board", s.draw.board_index},
                                      {"z_c", s.draw.z_c},
                                      {"alpha_deg", deg}});
  }
  write_text(fs::path(out_dir) / "placements.json", placements.dump(2) + "\n");
  return 0;
}

int cmd_attack(const std::string& config_path, const std::string& ckpt,
               const std::string& out_dir, const std::string& kind,
               double epsilon, int64_t steps) {
  dh::ExperimentConfig cfg = dh::load_experiment_config(config_path);
  if (!kind.empty()) cfg.attack.kind = dh::attack_kind_from_string(kind);
  if (epsilon > 0.0) cfg.attack.epsilon = epsilon;
  if (steps > 0) cfg.attack.steps = steps;
  cfg.attack.validate();
  const dh::Experiment exp = dh::build_experiment(cfg);
  const dh::DepthNet net = dh::DepthNet::load(ckpt);
  const dh::ObjectBoard& board = exp.eval_pool.boards.front();

  const dh::AttackResult res =
      dh::run_attack(net, board, exp.eval_pool, cfg.camera, cfg.attack);

  fs::create_directories(out_dir);
  dh::write_png_rgb((fs::path(out_dir) / "board_adv.png").string(),
                    res.board.image);
  const dh::Tensor delta =
      dh::sub(res.board.image, board.image);  // effective perturbation
  dh::save_tensor((fs::path(out_dir) / "delta.dhtn").string(), delta);
  write_text(fs::path(out_dir) / "report.json",
             attack_json(res.report).dump(2) + "\n");
  std::cout << "attack " << res.report.kind << " eps=" << res.report.epsilon
            << " final_adv_loss=" << res.report.final_adv_loss
            << " perturbed_fraction=" << res.report.perturbed_fraction << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& init_ckpt, int64_t steps_override,
              const std::string& mode_override) {
  dh::ExperimentConfig cfg = dh::load_experiment_config(config_path);
  if (steps_override > 0) cfg.train.steps = steps_override;
  if (!mode_override.empty())
    cfg.train.mode = dh::train_mode_from_string(mode_override);
  const dh::Experiment exp = dh::build_experiment(cfg);

  dh::DepthNet net =
      init_ckpt.empty()
          ? dh::DepthNet::create(cfg.seed, cfg.min_depth, cfg.max_depth)
          : dh::DepthNet::load(init_ckpt);
  dh::DepthNet ref =
      cfg.train_ref_checkpoint.empty()
          ? net.clone()
          : dh::DepthNet::load(cfg.train_ref_checkpoint);

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw dh::FormatError("cannot open train_log.jsonl");
  const std::string prefix = (fs::path(out_dir) / "model").string();
  const dh::HardenResult result = dh::harden(
      net, exp.train_pool, cfg.camera, cfg.train,
      cfg.train.mode == dh::TrainMode::kSupPseudo ? &ref : nullptr, &log,
      prefix);
  std::cout << "trained " << cfg.train.steps << " steps, mode "
            << dh::to_string(cfg.train.mode)
            << ", final loss=" << result.log.back().loss << "\n"
            << "checkpoint: " << prefix << "_final.dhck\n";
  return 0;
}

std::string format_table(const std::vector<std::string>& names,
                         const std::vector<dh::AttackEvaluation>& evals,
                         const dh::AttackConfig& attack) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-18s", "attack");
  out += line;
  for (const std::string& n : names) {
    std::snprintf(line, sizeof(line), " %12s/ABSE %6s", n.c_str(), "delta");
    out += line;
  }
  out += "\n";
  std::snprintf(line, sizeof(line), "%-18s",
                (dh::to_string(attack.kind) + " " +
                 std::to_string(attack.epsilon))
                    .c_str());
  out += line;
  for (const dh::AttackEvaluation& e : evals) {
    std::snprintf(line, sizeof(line), " %17.3f %6.3f", e.averaged.abse,
                  e.averaged.delta);
    out += line;
  }
  out += "\n";
  return out;
}

int cmd_evaluate(const std::string& config_path, const std::string& out_dir,
                 const std::vector<std::string>& ckpts, int64_t n_override) {
  dh::ExperimentConfig cfg = dh::load_experiment_config(config_path);
  if (n_override > 0) cfg.eval_n = n_override;
  const dh::Experiment exp = dh::build_experiment(cfg);
  const dh::ObjectBoard& board = exp.eval_pool.boards.front();
  const dh::EvalOptions opt{cfg.eval_n, dh::Rng::mix(cfg.seed, 0xe7a1)};

  std::vector<dh::DepthNet> nets;
  std::vector<std::string> names;
  for (const std::string& c : ckpts) {
    nets.push_back(dh::DepthNet::load(c));
    names.push_back(fs::path(c).stem().string());
  }

  ordered_json report;
  report["attack"] = ordered_json{{"kind", dh::to_string(cfg.attack.kind)},
                                  {"epsilon", cfg.attack.epsilon},
                                  {"steps", cfg.attack.steps}};
  report["models"] = ordered_json::array();
  std::vector<dh::AttackEvaluation> evals;
  for (size_t i = 0; i < nets.size(); ++i) {
    dh::AttackEvaluation ev = dh::evaluate_attack(nets[i], board,
                                                  exp.eval_pool, cfg.camera,
                                                  cfg.attack, opt);
    ordered_json m;
    m["checkpoint"] = ckpts[i];
    m["attacked_vs_benign"] = metrics_json(ev.averaged);
    if (ev.benign_vs_truth.n_pixels > 0)
      m["benign_vs_truth"] = metrics_json(ev.benign_vs_truth);
    ordered_json per = ordered_json::array();
    for (const dh::MetricsReport& r : ev.per_scene) per.push_back(metrics_json(r));
    m["per_scene"] = per;
    report["models"].push_back(m);
    evals.push_back(std::move(ev));
  }

  const std::string table = format_table(names, evals, cfg.attack);
  std::cout << table;

  if (nets.size() >= 2) {
    const auto matrix = dh::transfer_matrix(nets, board, exp.eval_pool,
                                            cfg.camera, cfg.attack, opt);
    ordered_json tm = ordered_json::array();
    for (size_t i = 0; i < matrix.size(); ++i) {
      ordered_json row = ordered_json::array();
      for (size_t j = 0; j < matrix[i].size(); ++j)
        row.push_back(metrics_json(matrix[i][j]));
      tm.push_back(row);
    }
    report["transfer_matrix"] = tm;
    std::cout << "transfer matrix (rows = source, cols = target, ABSE):\n";
    for (size_t i = 0; i < matrix.size(); ++i) {
      for (size_t j = 0; j < matrix[i].size(); ++j)
        std::printf(" %8.3f", matrix[i][j].abse);
      std::printf("\n");
    }
  }

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "eval_report.json", report.dump(2) + "\n");
  write_text(fs::path(out_dir) / "table.txt", table);
  return 0;
}

int cmd_metrics(const std::string& estimated, const std::string& reference,
                const std::string& mask_path, const std::string& out_path) {
  const dh::Tensor x = dh::load_tensor(estimated);
  const dh::Tensor y = dh::load_tensor(reference);
  dh::Tensor mask;
  if (!mask_path.empty()) {
    mask = dh::load_tensor(mask_path);
  } else {
    mask = dh::Tensor::full(x.shape(), 1.0);
  }
  dh::MetricsReport r = dh::compute_metrics(x, y, mask);
  r.region = mask_path.empty() ? "full-frame" : "masked";
  const std::string text = metrics_json(r).dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_text(out_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthharden: two-view scene synthesis, depth-network attacks "
               "and self-supervised hardening"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (0 = all cores)");

  std::string config_path, out_dir = "out";
  uint64_t seed = 0;
  bool has_seed = false;
  int64_t n = 4;

  auto* syn = app.add_subcommand("synthesize",
                                 "Write synthesized two-view scene pairs");
  syn->add_option("--config", config_path, "experiment config (.toml/.json)")
      ->required();
  syn->add_option("-o,--out", out_dir, "output directory");
  syn->add_option("--n", n, "number of scene pairs");
  syn->add_option("--seed", seed, "override the experiment seed")
      ->each([&](const std::string&) { has_seed = true; });

  std::string ckpt, attack_kind;
  double attack_eps = 0.0;
  int64_t attack_steps = 0;
  auto* atk = app.add_subcommand("attack",
                                 "Optimize a perturbed board against a net");
  atk->add_option("--config", config_path, "experiment config")->required();
  atk->add_option("--checkpoint", ckpt, "depth net checkpoint")->required();
  atk->add_option("-o,--out", out_dir, "output directory");
  atk->add_option("--kind", attack_kind, "soft_l0|pgd_linf|patch override");
  atk->add_option("--epsilon", attack_eps, "budget override");
  atk->add_option("--steps", attack_steps, "step count override");

  std::string init_ckpt, mode_override;
  int64_t steps_override = 0;
  auto* trn = app.add_subcommand("train", "Train or harden a depth net");
  trn->add_option("--config", config_path, "experiment config")->required();
  trn->add_option("-o,--out", out_dir, "output directory");
  trn->add_option("--init", init_ckpt, "start from this checkpoint");
  trn->add_option("--steps", steps_override, "step count override");
  trn->add_option("--mode", mode_override, "benign|selfsup|sup_pseudo");

  std::vector<std::string> ckpts;
  int64_t n_eval = 0;
  auto* evl = app.add_subcommand("evaluate",
                                 "Score checkpoints under the configured "
                                 "attack; two or more add a transfer matrix");
  evl->add_option("--config", config_path, "experiment config")->required();
  evl->add_option("-o,--out", out_dir, "output directory");
  evl->add_option("--n", n_eval, "eval scene count override");
  evl->add_option("checkpoints", ckpts, "checkpoints to evaluate")
      ->required()
      ->expected(-1);

  std::string est, ref, mask_path, report_out;
  auto* met = app.add_subcommand("metrics",
                                 "Compare two depth dumps (DHTN tensors)");
  met->add_option("--estimated", est, "estimated depth dump")->required();
  met->add_option("--reference", ref, "reference depth dump")->required();
  met->add_option("--mask", mask_path, "optional region mask dump");
  met->add_option("-o,--out", report_out, "write the report JSON here");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*syn) return cmd_synthesize(config_path, out_dir, n, seed, has_seed);
    if (*atk)
      return cmd_attack(config_path, ckpt, out_dir, attack_kind, attack_eps,
                        attack_steps);
    if (*trn)
      return cmd_train(config_path, out_dir, init_ckpt, steps_override,
                       mode_override);
    if (*evl) return cmd_evaluate(config_path, out_dir, ckpts, n_eval);
    if (*met) return cmd_metrics(est, ref, mask_path, report_out);
  } catch (const dh::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dh::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const dh::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const dh::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
