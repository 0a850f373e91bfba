// Command-line front end: train, evaluate, sweep-k, grad-check and
// export-timeline over the library. Config comes from an optional key=value
// file plus --set overrides; every run writes its resolved config next to its
// outputs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ldsa/checkpoint.hpp"
#include "ldsa/config.hpp"
#include "ldsa/learner.hpp"
#include "ldsa/metrics.hpp"
#include "ldsa/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string ablation;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_dir_required) {
    cmd->add_option("--config", args.config_file, "key=value config file");
    cmd->add_option("--set", args.sets, "config override, key=value; repeatable")->take_all();
    cmd->add_option("--seed", args.seed, "override the run seed");
    cmd->add_option("--ablation", args.ablation,
                    "variant: none, NP, NR, NP+NR, NoDecoder, RanSele, DireProb, Mix, SharedBaseline");
    auto* od = cmd->add_option("--out-dir", args.out_dir, "output directory");
    if (out_dir_required) od->required();
}

ldsa::RunConfig resolve_config(const CommonArgs& args) {
    ldsa::RunConfig cfg;
    if (!args.config_file.empty()) cfg = ldsa::RunConfig::from_file(args.config_file);
    if (!args.ablation.empty()) cfg.ablation = ldsa::parse_ablation(args.ablation);
    for (const auto& kv : args.sets) cfg.apply_override(kv);
    if (args.seed) cfg.seed = *args.seed;
    cfg.validate();
    return cfg;
}

// Loads the run config saved next to a checkpoint when none is given.
ldsa::RunConfig resolve_run_config(const CommonArgs& args) {
    CommonArgs local = args;
    if (local.config_file.empty()) {
        const auto saved = std::filesystem::path(args.out_dir) / "config.txt";
        if (!std::filesystem::exists(saved)) {
            throw ldsa::ConfigError("no --config given and " + saved.string() + " does not exist");
        }
        local.config_file = saved.string();
    }
    return resolve_config(local);
}

int run_train(const CommonArgs& args) {
    ldsa::RunConfig cfg = resolve_config(args);
    ldsa::Trainer trainer(cfg, args.out_dir);
    ldsa::TrainOutcome out = trainer.run();
    nlohmann::json rec;
    rec["timesteps"] = out.timesteps;
    rec["episodes"] = out.episodes;
    rec["grad_steps"] = out.grad_steps;
    rec["final_normalized_return"] = out.final_normalized_return;
    rec["final_switch_mean"] = out.final_switch_mean;
    rec["stopped_early"] = out.stopped_early;
    std::cout << rec.dump() << "\n";
    return 0;
}

int run_evaluate(const CommonArgs& args, const std::string& checkpoint, int episodes, bool export_timelines,
                 const std::string& dest) {
    ldsa::RunConfig cfg = resolve_run_config(args);
    auto env = ldsa::make_env(cfg);
    ldsa::Learner learner(cfg, env->spec());
    std::filesystem::path ckpt = checkpoint.empty()
                                     ? std::filesystem::path(args.out_dir) / "checkpoints" / "final"
                                     : std::filesystem::path(checkpoint);
    ldsa::CheckpointMeta meta = ldsa::load_checkpoint(ckpt, learner);
    const int n = episodes > 0 ? episodes : cfg.eval_episodes;
    ldsa::EvalSummary s = ldsa::evaluate_policy(*env, learner.params(), learner.dims(), cfg, n,
                                                ldsa::derive_seed(cfg.seed, "eval-round", meta.timesteps),
                                                export_timelines);
    if (export_timelines) {
        std::filesystem::path out =
            dest.empty() ? std::filesystem::path(args.out_dir) / "timelines" : std::filesystem::path(dest);
        std::filesystem::create_directories(out);
        for (std::size_t i = 0; i < s.timelines.size(); ++i) {
            ldsa::write_timeline_csv(out / ("timeline_ep" + std::to_string(i) + ".csv"), s.timelines[i],
                                     learner.dims().k);
        }
    }
    nlohmann::json rec;
    rec["checkpoint_timesteps"] = meta.timesteps;
    rec["episodes"] = n;
    rec["eval_return"] = s.eval_return;
    rec["discounted_return"] = s.discounted;
    rec["oracle_return"] = s.oracle;
    rec["normalized_return"] = s.normalized;
    rec["switch_mean"] = s.switch_mean;
    std::cout << rec.dump() << "\n";
    return 0;
}

int run_sweep(const CommonArgs& args, const std::string& k_values) {
    ldsa::RunConfig cfg = resolve_config(args);
    std::vector<int> ks;
    std::string tok;
    std::istringstream is(k_values);
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) ks.push_back(std::stoi(tok));
    }
    auto rows = ldsa::sweep_k(cfg, ks, args.out_dir);
    for (const auto& e : rows) {
        nlohmann::json rec;
        rec["k"] = e.k;
        rec["normalized_return"] = e.normalized_return;
        rec["eval_return"] = e.eval_return;
        rec["switch_mean"] = e.switch_mean;
        std::cout << rec.dump() << "\n";
    }
    return 0;
}

// Full-loss gradient verification on the small two-agent setup: analytic
// gradients against central differences over every parameter.
int run_grad_check(const CommonArgs& args) {
    CommonArgs local = args;
    ldsa::RunConfig cfg;
    if (!local.config_file.empty()) cfg = ldsa::RunConfig::from_file(local.config_file);
    else {
        cfg.env_n_agents = 2;
        cfg.env_n_job_types = 2;
        cfg.env_episode_limit = 3;
        cfg.n_subtasks = 2;
        cfg.repr_dim = 8;
        cfg.rnn_hidden_dim = 16;
        cfg.mixing_embed_dim = 8;
        cfg.batch_size = 2;
    }
    for (const auto& kv : local.sets) cfg.apply_override(kv);
    if (local.seed) cfg.seed = *local.seed;
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    auto env = ldsa::make_env(cfg);
    ldsa::Learner learner(cfg, env->spec());

    ldsa::Rng sel = ldsa::derive_rng(cfg.seed, "gc-select");
    ldsa::Rng expl = ldsa::derive_rng(cfg.seed, "gc-explore");
    ldsa::RolloutOptions opt;
    opt.train = true;
    opt.epsilon = 0.3;
    std::vector<ldsa::Episode> eps;
    for (int i = 0; i < cfg.batch_size; ++i) {
        eps.push_back(ldsa::run_episode(*env, ldsa::derive_seed(cfg.seed, "gc-env", i), learner.params(),
                                        learner.dims(), cfg, opt, sel, expl)
                          .episode);
    }
    std::vector<const ldsa::Episode*> batch;
    for (const auto& e : eps) batch.push_back(&e);

    ldsa::BatchData bd = learner.prepare(batch);
    auto targets = learner.td_targets(bd);
    ldsa::Rng noise_rng = ldsa::derive_rng(cfg.seed, "gc-noise");
    ldsa::NoiseTable noise = learner.draw_noise(bd, noise_rng);

    std::vector<double> analytic;
    learner.relaxed_loss(learner.params(), bd, targets, noise, nullptr, &analytic);

    ldsa::ParamStore probe = learner.params();
    auto x0 = probe.flatten();
    const double h = 1e-5;
    double worst = 0.0;
    std::size_t worst_i = 0;
    double worst_analytic = 0.0, worst_numeric = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto x = x0;
        x[i] = x0[i] + h;
        probe.load_flat(x);
        const double up = learner.relaxed_loss(probe, bd, targets, noise);
        x[i] = x0[i] - h;
        probe.load_flat(x);
        const double dn = learner.relaxed_loss(probe, bd, targets, noise);
        const double numeric = (up - dn) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        if (rel > worst) {
            worst = rel;
            worst_i = i;
            worst_analytic = analytic[i];
            worst_numeric = numeric;
        }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json rec;
    rec["parameters"] = x0.size();
    rec["max_rel_error"] = worst;
    rec["worst_coordinate"] = worst_i;
    rec["analytic_at_worst"] = worst_analytic;
    rec["numeric_at_worst"] = worst_numeric;
    rec["seconds"] = seconds;
    rec["pass"] = worst < 1e-4;
    std::cout << rec.dump() << "\n";
    return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic subtask assignment trainer"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, sweep_args, gc_args, tl_args;
    std::string eval_checkpoint, tl_checkpoint, tl_dest;
    int eval_episodes = 0, tl_episodes = 0;
    std::string k_values = "1,2,4,8";

    auto* train_cmd = app.add_subcommand("train", "train a policy and write metrics + checkpoints");
    add_common(train_cmd, train_args, true);

    auto* eval_cmd = app.add_subcommand("evaluate", "greedy evaluation of a saved checkpoint");
    add_common(eval_cmd, eval_args, true);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint directory (default <out-dir>/checkpoints/final)");
    eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes (default from config)");

    auto* sweep_cmd = app.add_subcommand("sweep-k", "train once per subtask count and summarize");
    add_common(sweep_cmd, sweep_args, true);
    sweep_cmd->add_option("--k-values", k_values, "comma-separated subtask counts");

    auto* gc_cmd = app.add_subcommand("grad-check", "verify analytic gradients of the full loss");
    add_common(gc_cmd, gc_args, false);

    auto* tl_cmd = app.add_subcommand("export-timeline", "write per-episode assignment CSVs from a checkpoint");
    add_common(tl_cmd, tl_args, true);
    tl_cmd->add_option("--checkpoint", tl_checkpoint, "checkpoint directory (default <out-dir>/checkpoints/final)");
    tl_cmd->add_option("--episodes", tl_episodes, "episodes to export (default from config)");
    tl_cmd->add_option("--dest", tl_dest, "destination directory (default <out-dir>/timelines)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(train_args);
        if (eval_cmd->parsed()) return run_evaluate(eval_args, eval_checkpoint, eval_episodes, false, "");
        if (sweep_cmd->parsed()) return run_sweep(sweep_args, k_values);
        if (gc_cmd->parsed()) return run_grad_check(gc_args);
        if (tl_cmd->parsed()) return run_evaluate(tl_args, tl_checkpoint, tl_episodes, true, tl_dest);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
