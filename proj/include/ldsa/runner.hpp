#pragma once

// The training and evaluation loops. Training alternates one collected
// episode with one gradient step once the buffer holds a batch, refreshes the
// target network on an episode interval, and at every evaluation point writes
// the metrics record, the current checkpoint, the representation matrix and
// per-episode assignment timelines under the output directory.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ldsa/checkpoint.hpp"
#include "ldsa/config.hpp"
#include "ldsa/learner.hpp"
#include "ldsa/metrics.hpp"
#include "ldsa/optim.hpp"
#include "ldsa/replay.hpp"
#include "ldsa/rollout.hpp"

namespace ldsa {

inline double discounted_return(const Episode& ep, double gamma) {
    double acc = 0.0;
    double w = 1.0;
    for (double r : ep.reward) {
        acc += w * r;
        w *= gamma;
    }
    return acc;
}

struct EvalSummary {
    double eval_return = 0.0;
    double discounted = 0.0;
    double oracle = 0.0;
    double normalized = 0.0;
    double switch_mean = 0.0;
    std::vector<long> usage;
    std::vector<std::vector<TimelineRow>> timelines;
};

// Greedy policy, greedy assignments, no exploration. Episode seeds derive
// from `base_seed`, so the same call reproduces the same figure exactly.
inline EvalSummary evaluate_policy(Env& env, const ParamStore& store, const ModelDims& dims, const RunConfig& cfg,
                                   int episodes, std::uint64_t base_seed, bool record_timelines) {
    EvalSummary s;
    s.usage.assign(static_cast<std::size_t>(dims.k), 0);
    Rng sel = derive_rng(base_seed, "eval-select");
    Rng expl = derive_rng(base_seed, "eval-explore");  // never consulted in eval mode
    RolloutOptions opt;
    opt.record_timeline = record_timelines;
    for (int i = 0; i < episodes; ++i) {
        RolloutResult res = run_episode(env, derive_seed(base_seed, "eval-env", i), store, dims, cfg, opt, sel, expl);
        s.eval_return += res.episode.undiscounted_return();
        s.discounted += discounted_return(res.episode, env.spec().gamma);
        auto model = env.oracle_model();
        s.oracle += oracle_best_return(*model, env.spec().n_agents, env.spec().n_actions, env.spec().episode_limit,
                                       env.spec().gamma);
        s.switch_mean += res.switch_count;
        for (std::size_t u = 0; u < res.subtask_usage.size(); ++u) s.usage[u] += res.subtask_usage[u];
        if (record_timelines) s.timelines.push_back(std::move(res.timeline));
    }
    if (episodes > 0) {
        s.eval_return /= episodes;
        s.discounted /= episodes;
        s.oracle /= episodes;
        s.switch_mean /= episodes;
    }
    s.normalized = s.oracle > 0.0 ? s.discounted / s.oracle : 0.0;
    return s;
}

struct TrainOutcome {
    long timesteps = 0;
    long episodes = 0;
    long grad_steps = 0;
    double final_normalized_return = 0.0;
    double final_switch_mean = 0.0;
    bool stopped_early = false;
};

class Trainer {
public:
    Trainer(const RunConfig& cfg, std::filesystem::path out_dir)
        : cfg_(cfg),
          out_dir_(std::move(out_dir)),
          env_(make_env(cfg)),
          learner_(cfg, env_->spec()),
          buffer_(static_cast<std::size_t>(cfg.buffer_capacity)),
          schedule_{cfg.eps_start, cfg.eps_end, cfg.eps_anneal_time},
          rollout_sel_(derive_rng(cfg.seed, "rollout-select")),
          rollout_expl_(derive_rng(cfg.seed, "rollout-explore")),
          sample_rng_(derive_rng(cfg.seed, "replay-sample")) {
        cfg_.validate();
        std::filesystem::create_directories(out_dir_);
        std::ofstream conf(out_dir_ / "config.txt");
        if (!conf) throw ConfigError("cannot write " + (out_dir_ / "config.txt").string());
        conf << cfg_.serialize();
    }

    Learner& learner() { return learner_; }

    TrainOutcome run() {
        MetricsWriter metrics(out_dir_ / "metrics.jsonl");
        metrics.write_header(cfg_);

        TrainOutcome out;
        long next_eval = 0;
        long last_eval_ts = -1;
        double loss_td_sum = 0.0, loss_spread_sum = 0.0, loss_temporal_sum = 0.0;
        int steps_since_eval = 0;
        double latest_normalized = 0.0;
        double latest_switch_mean = 0.0;

        auto do_eval = [&](long ts) {
            EvalSummary s = evaluate_policy(*env_, learner_.params(), learner_.dims(), cfg_, cfg_.eval_episodes,
                                            derive_seed(cfg_.seed, "eval-round", ts), true);
            EvalMetrics m;
            m.timestep = ts;
            m.grad_steps = steps_since_eval;
            if (steps_since_eval > 0) {
                m.loss_td = loss_td_sum / steps_since_eval;
                m.loss_spread = loss_spread_sum / steps_since_eval;
                m.loss_temporal = loss_temporal_sum / steps_since_eval;
            }
            m.eval_return = s.eval_return;
            m.discounted_return = s.discounted;
            m.oracle_return = s.oracle;
            m.normalized_return = s.normalized;
            m.switch_mean = s.switch_mean;
            m.usage = s.usage;
            metrics.write_eval(m);
            loss_td_sum = loss_spread_sum = loss_temporal_sum = 0.0;
            steps_since_eval = 0;
            latest_normalized = s.normalized;
            latest_switch_mean = s.switch_mean;
            last_eval_ts = ts;

            const auto eval_dir = out_dir_ / ("eval_" + std::to_string(ts));
            std::filesystem::create_directories(eval_dir);
            write_repr_csv(eval_dir / "representations.csv", learner_.params(), learner_.dims());
            for (std::size_t i = 0; i < s.timelines.size(); ++i) {
                write_timeline_csv(eval_dir / ("timeline_ep" + std::to_string(i) + ".csv"), s.timelines[i],
                                   learner_.dims().k);
            }
            CheckpointMeta meta;
            meta.config_hash = cfg_.hash();
            meta.timesteps = ts;
            meta.episodes = out.episodes;
            save_checkpoint(out_dir_ / "checkpoints" / "last", learner_, meta);
        };

        while (out.timesteps < cfg_.total_timesteps) {
            while (out.timesteps >= next_eval) {
                do_eval(out.timesteps);
                next_eval += cfg_.eval_interval;
                if (cfg_.stop_at_normalized_return > 0.0 && latest_normalized >= cfg_.stop_at_normalized_return) {
                    out.stopped_early = true;
                }
            }
            if (out.stopped_early) break;

            RolloutOptions opt;
            opt.train = true;
            opt.epsilon = schedule_.value(out.timesteps);
            RolloutResult res = run_episode(*env_, derive_seed(cfg_.seed, "train-env", out.episodes),
                                            learner_.params(), learner_.dims(), cfg_, opt, rollout_sel_,
                                            rollout_expl_);
            out.timesteps += res.episode.length;
            out.episodes += 1;
            buffer_.push(std::move(res.episode));

            if (buffer_.ready(cfg_.batch_size)) {
                auto batch = buffer_.sample(cfg_.batch_size, sample_rng_);
                LossReport rep = learner_.train_step(batch);
                loss_td_sum += rep.td;
                loss_spread_sum += rep.spread;
                loss_temporal_sum += rep.temporal;
                ++steps_since_eval;
                ++out.grad_steps;
            }
            if (out.episodes % cfg_.target_update_interval == 0) learner_.refresh_target();
        }

        if (last_eval_ts != out.timesteps) do_eval(out.timesteps);
        CheckpointMeta meta;
        meta.config_hash = cfg_.hash();
        meta.timesteps = out.timesteps;
        meta.episodes = out.episodes;
        save_checkpoint(out_dir_ / "checkpoints" / "final", learner_, meta);
        out.final_normalized_return = latest_normalized;
        out.final_switch_mean = latest_switch_mean;
        return out;
    }

private:
    RunConfig cfg_;
    std::filesystem::path out_dir_;
    std::unique_ptr<Env> env_;
    Learner learner_;
    ReplayBuffer buffer_;
    EpsilonSchedule schedule_;
    Rng rollout_sel_;
    Rng rollout_expl_;
    Rng sample_rng_;
};

struct SweepEntry {
    int k = 0;
    double normalized_return = 0.0;
    double eval_return = 0.0;
    double switch_mean = 0.0;
};

// One full train per k value, shared seed, results sorted by k.
inline std::vector<SweepEntry> sweep_k(const RunConfig& base, std::vector<int> k_values,
                                       const std::filesystem::path& out_dir) {
    if (k_values.empty()) throw ConfigError("sweep_k: no k values given");
    std::sort(k_values.begin(), k_values.end());
    std::vector<SweepEntry> rows;
    for (int k : k_values) {
        RunConfig cfg = base;
        cfg.n_subtasks = k;
        Trainer trainer(cfg, out_dir / ("k_" + std::to_string(k)));
        TrainOutcome res = trainer.run();
        SweepEntry e;
        e.k = k;
        e.normalized_return = res.final_normalized_return;
        e.switch_mean = res.final_switch_mean;
        EvalSummary s;  // final return re-derived from the stored metrics would
                        // need a parse; rerun the deterministic evaluation instead
        {
            auto env = make_env(cfg);
            s = evaluate_policy(*env, trainer.learner().params(), trainer.learner().dims(), cfg, cfg.eval_episodes,
                                derive_seed(cfg.seed, "eval-round", res.timesteps), false);
        }
        e.eval_return = s.eval_return;
        rows.push_back(e);
    }
    std::ofstream out(out_dir / "summary.jsonl");
    if (!out) throw ConfigError("cannot write " + (out_dir / "summary.jsonl").string());
    for (const auto& e : rows) {
        nlohmann::json rec;
        rec["k"] = e.k;
        rec["normalized_return"] = e.normalized_return;
        rec["eval_return"] = e.eval_return;
        rec["switch_mean"] = e.switch_mean;
        out << rec.dump() << "\n";
    }
    return rows;
}

}  // namespace ldsa
