#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ldsa/checkpoint.hpp"
#include "ldsa/metrics.hpp"
#include "ldsa/runner.hpp"
#include "support/micro_model.hpp"

using namespace ldsa;
using testsupport::MicroModel;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("ldsa_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// A couple of gradient steps so the optimizer state and target offset are
// both nonzero before checkpointing.
void warm_up(Learner& learner, const RunConfig& cfg, int steps) {
    auto env = make_env(cfg);
    Rng sel = derive_rng(17, "sel");
    Rng expl = derive_rng(17, "expl");
    RolloutOptions opt;
    opt.train = true;
    opt.epsilon = 0.3;
    std::vector<Episode> eps;
    for (int i = 0; i < 2; ++i) {
        eps.push_back(
            run_episode(*env, static_cast<std::uint64_t>(i), learner.params(), learner.dims(), cfg, opt, sel, expl)
                .episode);
    }
    std::vector<const Episode*> batch;
    for (const auto& e : eps) batch.push_back(&e);
    for (int i = 0; i < steps; ++i) learner.train_step(batch);
}

RunConfig tiny_train_config(std::uint64_t seed) {
    MicroModel mm;
    RunConfig cfg = mm.cfg;
    cfg.total_timesteps = 60;
    cfg.eval_interval = 30;
    cfg.eval_episodes = 3;
    cfg.batch_size = 2;
    cfg.buffer_capacity = 16;
    cfg.target_update_interval = 5;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    MicroModel mm;
    Learner a(mm.cfg, mm.env);
    warm_up(a, mm.cfg, 3);
    a.refresh_target();
    warm_up(a, mm.cfg, 2);  // target now differs from online again

    fs::path dir = fresh_dir("ckpt_roundtrip");
    CheckpointMeta meta;
    meta.config_hash = mm.cfg.hash();
    meta.timesteps = 123;
    meta.episodes = 45;
    save_checkpoint(dir, a, meta);

    Learner b(mm.cfg, mm.env);
    ASSERT_NE(b.params().flatten(), a.params().flatten());
    CheckpointMeta got = load_checkpoint(dir, b);
    EXPECT_EQ(got.config_hash, mm.cfg.hash());
    EXPECT_EQ(got.timesteps, 123);
    EXPECT_EQ(got.episodes, 45);
    EXPECT_EQ(b.params().flatten(), a.params().flatten());
    EXPECT_EQ(b.target_params().flatten(), a.target_params().flatten());
    EXPECT_EQ(b.optimizer().state(), a.optimizer().state());
}

TEST(Checkpoint, ShapeMismatchRaises) {
    MicroModel mm;
    Learner a(mm.cfg, mm.env);
    fs::path dir = fresh_dir("ckpt_shape");
    save_checkpoint(dir, a, {});

    RunConfig wide = mm.cfg;
    wide.rnn_hidden_dim = 12;
    Learner b(wide, mm.env);
    EXPECT_THROW(load_checkpoint(dir, b), CheckpointError);
}

TEST(Checkpoint, MissingBlockFileRaises) {
    MicroModel mm;
    Learner a(mm.cfg, mm.env);
    fs::path dir = fresh_dir("ckpt_missing");
    save_checkpoint(dir, a, {});
    fs::remove(dir / "blocks" / "mix.v2_b.f64");
    Learner b(mm.cfg, mm.env);
    EXPECT_THROW(load_checkpoint(dir, b), CheckpointError);
}

TEST(Checkpoint, VariantBlockSetMismatchRaises) {
    MicroModel shared(Ablation::SharedBaseline);
    Learner a(shared.cfg, shared.env);
    fs::path dir = fresh_dir("ckpt_variant");
    save_checkpoint(dir, a, {});
    MicroModel full;
    Learner b(full.cfg, full.env);
    EXPECT_THROW(load_checkpoint(dir, b), CheckpointError);
}

TEST(Checkpoint, UnsupportedFormatRaises) {
    MicroModel mm;
    Learner a(mm.cfg, mm.env);
    fs::path dir = fresh_dir("ckpt_format");
    save_checkpoint(dir, a, {});
    std::string manifest = slurp(dir / "manifest.txt");
    manifest.replace(manifest.find("format 1"), 8, "format 9");
    std::ofstream(dir / "manifest.txt") << manifest;
    Learner b(mm.cfg, mm.env);
    EXPECT_THROW(load_checkpoint(dir, b), CheckpointError);
}

TEST(Evaluate, SideEffectFreeAndRepeatable) {
    MicroModel mm;
    Learner learner(mm.cfg, mm.env);
    warm_up(learner, mm.cfg, 2);
    auto env = make_env(mm.cfg);
    auto before = learner.params().flatten();
    EvalSummary a = evaluate_policy(*env, learner.params(), learner.dims(), mm.cfg, 4, 99, true);
    EvalSummary b = evaluate_policy(*env, learner.params(), learner.dims(), mm.cfg, 4, 99, true);
    EXPECT_EQ(learner.params().flatten(), before);
    EXPECT_EQ(a.eval_return, b.eval_return);
    EXPECT_EQ(a.discounted, b.discounted);
    EXPECT_EQ(a.normalized, b.normalized);
    EXPECT_EQ(a.switch_mean, b.switch_mean);
    EXPECT_EQ(a.usage, b.usage);
    EXPECT_GE(a.normalized, 0.0);
    EXPECT_LE(a.normalized, 1.0);
}

TEST(Evaluate, RoundTripReproducesReturnExactly) {
    MicroModel mm;
    Learner a(mm.cfg, mm.env);
    warm_up(a, mm.cfg, 4);
    auto env = make_env(mm.cfg);
    EvalSummary before = evaluate_policy(*env, a.params(), a.dims(), mm.cfg, 5, 7, false);

    fs::path dir = fresh_dir("ckpt_eval");
    save_checkpoint(dir, a, {});
    Learner b(mm.cfg, mm.env);
    load_checkpoint(dir, b);
    EvalSummary after = evaluate_policy(*env, b.params(), b.dims(), mm.cfg, 5, 7, false);
    EXPECT_EQ(before.eval_return, after.eval_return);
    EXPECT_EQ(before.normalized, after.normalized);
}

TEST(Metrics, WriterProducesValidStream) {
    fs::path dir = fresh_dir("metrics_valid");
    MicroModel mm;
    {
        MetricsWriter w(dir / "metrics.jsonl");
        w.write_header(mm.cfg);
        EvalMetrics m;
        m.timestep = 0;
        m.usage = {3, 1};
        w.write_eval(m);
        m.timestep = 100;
        m.eval_return = 1.5;
        w.write_eval(m);
    }
    EXPECT_EQ(validate_metrics_file(dir / "metrics.jsonl"), 2);
}

TEST(Metrics, ValidatorRejectsGarbage) {
    fs::path dir = fresh_dir("metrics_bad");
    std::ofstream(dir / "a.jsonl") << "not json\n";
    EXPECT_THROW(validate_metrics_file(dir / "a.jsonl"), ConfigError);
    std::ofstream(dir / "b.jsonl") << "{\"record\":\"eval\"}\n";
    EXPECT_THROW(validate_metrics_file(dir / "b.jsonl"), ConfigError);
    std::ofstream(dir / "c.jsonl") << "";
    EXPECT_THROW(validate_metrics_file(dir / "c.jsonl"), ConfigError);
}

TEST(Trainer, ArtifactsAndSchema) {
    RunConfig cfg = tiny_train_config(3);
    fs::path dir = fresh_dir("trainer_artifacts");
    Trainer trainer(cfg, dir);
    TrainOutcome out = trainer.run();
    EXPECT_GE(out.timesteps, cfg.total_timesteps);
    EXPECT_GT(out.grad_steps, 0);

    EXPECT_TRUE(fs::exists(dir / "config.txt"));
    EXPECT_EQ(RunConfig::from_file(dir / "config.txt").hash(), cfg.hash());
    const int evals = validate_metrics_file(dir / "metrics.jsonl");
    EXPECT_GE(evals, 3);  // 0, 30, 60
    EXPECT_TRUE(fs::exists(dir / "eval_0" / "representations.csv"));
    EXPECT_TRUE(fs::exists(dir / "eval_0" / "timeline_ep0.csv"));
    EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last" / "manifest.txt"));
    EXPECT_TRUE(fs::exists(dir / "checkpoints" / "final" / "manifest.txt"));

    // the final checkpoint evaluates to the recorded final figure
    Learner reloaded(cfg, make_env(cfg)->spec());
    CheckpointMeta meta = load_checkpoint(dir / "checkpoints" / "final", reloaded);
    EXPECT_EQ(meta.timesteps, out.timesteps);
    auto env = make_env(cfg);
    EvalSummary s = evaluate_policy(*env, reloaded.params(), reloaded.dims(), cfg, cfg.eval_episodes,
                                    derive_seed(cfg.seed, "eval-round", meta.timesteps), false);
    EXPECT_EQ(s.normalized, out.final_normalized_return);
}

TEST(Trainer, MetricsBitIdenticalAcrossRuns) {
    RunConfig cfg = tiny_train_config(9);
    fs::path da = fresh_dir("trainer_det_a");
    fs::path db = fresh_dir("trainer_det_b");
    Trainer(cfg, da).run();
    Trainer(cfg, db).run();
    EXPECT_EQ(slurp(da / "metrics.jsonl"), slurp(db / "metrics.jsonl"));
    EXPECT_EQ(slurp(da / "checkpoints" / "final" / "blocks" / "agent.gru_wx.f64"),
              slurp(db / "checkpoints" / "final" / "blocks" / "agent.gru_wx.f64"));
    EXPECT_EQ(slurp(da / "eval_0" / "timeline_ep0.csv"), slurp(db / "eval_0" / "timeline_ep0.csv"));

    RunConfig other = cfg;
    other.seed = 10;
    fs::path dc = fresh_dir("trainer_det_c");
    Trainer(other, dc).run();
    EXPECT_NE(slurp(da / "metrics.jsonl"), slurp(dc / "metrics.jsonl"));
}

TEST(Trainer, EarlyStopOnThreshold) {
    RunConfig cfg = tiny_train_config(5);
    cfg.total_timesteps = 100000;
    cfg.eval_interval = 60;
    cfg.stop_at_normalized_return = 0.05;  // reached almost immediately here
    fs::path dir = fresh_dir("trainer_stop");
    Trainer trainer(cfg, dir);
    TrainOutcome out = trainer.run();
    EXPECT_TRUE(out.stopped_early);
    EXPECT_LT(out.timesteps, cfg.total_timesteps);
    EXPECT_GE(out.final_normalized_return, 0.05);
}

TEST(Trainer, AbortKeepsLastGoodCheckpoint) {
    RunConfig cfg = tiny_train_config(6);
    cfg.lr = 1e280;  // first update catapults the parameters into overflow
    fs::path dir = fresh_dir("trainer_abort");
    Trainer trainer(cfg, dir);
    EXPECT_THROW(trainer.run(), TrainingAbort);
    EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last" / "manifest.txt"));
    EXPECT_FALSE(fs::exists(dir / "checkpoints" / "final" / "manifest.txt"));
    Learner reloaded(cfg, make_env(cfg)->spec());
    EXPECT_NO_THROW(load_checkpoint(dir / "checkpoints" / "last", reloaded));
    for (double v : reloaded.params().flatten()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Sweep, RunsPerKAndSummarizes) {
    RunConfig cfg = tiny_train_config(4);
    cfg.total_timesteps = 30;
    cfg.eval_interval = 30;
    fs::path dir = fresh_dir("sweep");
    auto rows = sweep_k(cfg, {2, 1}, dir);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].k, 1);  // sorted ascending regardless of input order
    EXPECT_EQ(rows[1].k, 2);
    EXPECT_TRUE(fs::exists(dir / "k_1" / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "k_2" / "metrics.jsonl"));
    std::ifstream sum(dir / "summary.jsonl");
    std::string line;
    int count = 0;
    while (std::getline(sum, line)) {
        auto rec = nlohmann::json::parse(line);
        EXPECT_TRUE(rec.contains("k"));
        EXPECT_TRUE(rec.contains("normalized_return"));
        ++count;
    }
    EXPECT_EQ(count, 2);
    EXPECT_THROW(sweep_k(cfg, {}, dir), ConfigError);
}

TEST(Config, FileRoundTripAndOverrides) {
    RunConfig cfg;
    cfg.n_subtasks = 3;
    cfg.lambda_kl = 0.25;
    cfg.ablation = Ablation::DirectProb;
    fs::path dir = fresh_dir("config_roundtrip");
    std::ofstream(dir / "run.cfg") << cfg.serialize();
    RunConfig back = RunConfig::from_file(dir / "run.cfg");
    EXPECT_EQ(back.hash(), cfg.hash());
    EXPECT_EQ(back.n_subtasks, 3);
    EXPECT_EQ(back.ablation, Ablation::DirectProb);

    back.apply_override("n_subtasks=5");
    EXPECT_EQ(back.n_subtasks, 5);
    EXPECT_NE(back.hash(), cfg.hash());
    EXPECT_THROW(back.apply_override("nonsense"), ConfigError);
    EXPECT_THROW(back.apply_override("unknown_key=1"), ConfigError);
    EXPECT_THROW(back.apply_override("n_subtasks=abc"), ConfigError);
}

TEST(Config, FileErrorsNameTheLine) {
    fs::path dir = fresh_dir("config_badfile");
    std::ofstream(dir / "bad.cfg") << "# comment\nn_subtasks=4\nthis line is wrong\n";
    try {
        RunConfig::from_file(dir / "bad.cfg");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
    }
    EXPECT_THROW(RunConfig::from_file(dir / "missing.cfg"), ConfigError);
}

TEST(Config, ValidateCatchesBadCombinations) {
    RunConfig cfg;
    cfg.match_param_width = true;  // only valid with the shared baseline
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.ablation = Ablation::SharedBaseline;
    EXPECT_NO_THROW(cfg.validate());

    RunConfig eps;
    eps.eps_end = 0.9;
    eps.eps_start = 0.5;
    EXPECT_THROW(eps.validate(), ConfigError);

    RunConfig env;
    env.env_name = "unknown_env";
    EXPECT_THROW(env.validate(), ConfigError);

    RunConfig buf;
    buf.buffer_capacity = 4;
    buf.batch_size = 32;
    EXPECT_THROW(buf.validate(), ConfigError);
}
