#include "chaoscope/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/eval.hpp"
#include "chaoscope/lyapunov.hpp"
#include "chaoscope/mleg.hpp"
#include "chaoscope/policy.hpp"
#include "chaoscope/report.hpp"
#include "chaoscope/rng.hpp"

namespace chaoscope::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

// `system.*` keys are validated by the system factory; everything else must
// be in `allowed`.
void validate_keys(const KeyValueConfig& cfg, std::vector<std::string> allowed) {
    allowed.insert(allowed.end(), {"seed", "out"});
    for (const auto& [key, value] : cfg.entries()) {
        if (key == "system" || key.rfind("system.", 0) == 0) continue;
        bool ok = false;
        for (const auto& a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config key '" + key + "'");
    }
}

std::vector<std::string> policy_keys(const std::string& prefix) {
    return {prefix, prefix + ".constant", prefix + ".path"};
}

struct NamedPolicy {
    PolicyParams params;
    std::string name;
};

NamedPolicy parse_policy(const KeyValueConfig& cfg, const std::string& prefix, const System& sys) {
    const std::string kind = cfg.get_str(prefix, "none");
    NamedPolicy out;
    if (kind == "none") {
        out.params = make_no_action(sys.info());
        out.name = "none";
    } else if (kind == "constant") {
        out.params = make_constant(sys.info(), cfg.get_list(prefix + ".constant"));
        out.name = "constant";
    } else if (kind == "file") {
        const std::string path = cfg.get_str(prefix + ".path");
        out.params = load_weights(path);
        out.name = path;
        if (out.params.state_dim != sys.info().state_dim ||
            out.params.action_dim != sys.info().action_dim)
            throw ConfigError("policy '" + path + "' has dims (" +
                              std::to_string(out.params.state_dim) + ", " +
                              std::to_string(out.params.action_dim) + "), system '" +
                              sys.info().id + "' needs (" + std::to_string(sys.info().state_dim) +
                              ", " + std::to_string(sys.info().action_dim) + ")");
    } else {
        throw ConfigError(prefix + " must be one of none|constant|file, got '" + kind + "'");
    }
    return out;
}

std::vector<std::string> spectrum_keys() {
    return {"spectrum.total_steps", "spectrum.iterations", "spectrum.norm_period",
            "spectrum.samples", "spectrum.epsilon", "spectrum.zero_threshold"};
}

SpectrumConfig spectrum_from(const KeyValueConfig& cfg) {
    SpectrumConfig s;
    s.norm_period = static_cast<int>(cfg.get_int("spectrum.norm_period", 10));
    if (cfg.has("spectrum.iterations") && !cfg.has("spectrum.total_steps")) {
        s.iterations = static_cast<int>(cfg.get_int("spectrum.iterations"));
        s.total_steps = static_cast<long long>(s.iterations) * s.norm_period;
    } else {
        s.total_steps = cfg.get_int("spectrum.total_steps", 1000);
        if (cfg.has("spectrum.iterations"))
            s.iterations = static_cast<int>(cfg.get_int("spectrum.iterations"));
        else if (s.total_steps % s.norm_period == 0)
            s.iterations = static_cast<int>(s.total_steps / s.norm_period);
    }
    s.samples = static_cast<int>(cfg.get_int("spectrum.samples", 20));
    s.epsilon = cfg.get_num("spectrum.epsilon", 1e-4);
    s.zero_threshold = cfg.get_num("spectrum.zero_threshold", 0.005);
    s.validate();
    return s;
}

void echo_spectrum(KeyValueConfig& kv, const SpectrumConfig& s) {
    kv.set_int("spectrum.total_steps", s.total_steps);
    kv.set_int("spectrum.iterations", s.iterations);
    kv.set_int("spectrum.norm_period", s.norm_period);
    kv.set_int("spectrum.samples", s.samples);
    kv.set_num("spectrum.epsilon", s.epsilon);
    kv.set_num("spectrum.zero_threshold", s.zero_threshold);
}

void echo_policy(KeyValueConfig& kv, const KeyValueConfig& cfg, const std::string& prefix) {
    kv.set(prefix, cfg.get_str(prefix, "none"));
    if (cfg.has(prefix + ".constant")) kv.set(prefix + ".constant", cfg.get_str(prefix + ".constant"));
    if (cfg.has(prefix + ".path")) kv.set(prefix + ".path", cfg.get_str(prefix + ".path"));
}

json config_json(const KeyValueConfig& kv) {
    json j = json::object();
    for (const auto& [key, value] : kv.entries()) j[key] = value;
    return j;
}

void write_resolved(const std::string& out_dir, const KeyValueConfig& resolved) {
    write_file_atomic((fs::path(out_dir) / "resolved_config.cfg").string(), resolved.serialize());
}

KeyValueConfig base_resolved(const std::string& command, const System& sys, std::uint64_t seed) {
    KeyValueConfig kv = sys.config_echo();
    kv.set("command", command);
    kv.set_int("seed", static_cast<long long>(seed));
    return kv;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_spectrum(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = policy_keys("policy");
    auto sk = spectrum_keys();
    allowed.insert(allowed.end(), sk.begin(), sk.end());
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    const NamedPolicy policy = parse_policy(cfg, "policy", *sys);
    const SpectrumConfig scfg = spectrum_from(cfg);
    const SpectrumSamples res = spectrum_over_samples(*sys, policy.params, scfg, seed);
    const StabilityClass cls = classify(res.mle_iqm, res.sle_iqm, scfg.zero_threshold);

    KeyValueConfig resolved = base_resolved("spectrum", *sys, seed);
    echo_policy(resolved, cfg, "policy");
    echo_spectrum(resolved, scfg);
    write_resolved(out_dir, resolved);

    std::string csv = "system,policy,seed,mle,sle,class\n";
    csv += sys->info().id + "," + policy.name + "," + std::to_string(seed) + "," +
           format_double(res.mle_iqm_reported()) + "," + format_double(res.sle_iqm_reported()) +
           "," + to_string(cls) + "\n";
    write_file_atomic((fs::path(out_dir) / "spectrum_summary.csv").string(), csv);

    json j;
    j["config"] = config_json(resolved);
    j["units"] = sys->info().dt > 0.0 ? "nats/unit-time (per-step values divided by dt)"
                                      : "nats/step";
    j["class"] = to_string(cls);
    j["exponents_iqm_per_step"] = res.exponents_iqm;
    {
        Vec reported = res.exponents_iqm;
        if (sys->info().dt > 0.0)
            for (auto& v : reported) v /= sys->info().dt;
        j["exponents_iqm_reported"] = reported;
    }
    j["mle_iqm_per_step"] = res.mle_iqm;
    j["sle_iqm_per_step"] = res.sle_iqm;
    j["mle_iqm_reported"] = res.mle_iqm_reported();
    j["sle_iqm_reported"] = res.sle_iqm_reported();
    j["mle_ci_per_step"] = {res.mle_ci.first, res.mle_ci.second};
    j["sle_ci_per_step"] = {res.sle_ci.first, res.sle_ci.second};
    j["samples_requested"] = scfg.samples;
    j["samples_used"] = res.per_sample.size();
    json samples = json::array();
    for (std::size_t i = 0; i < res.per_sample.size(); ++i) {
        json s;
        s["exponents_per_step"] = res.per_sample[i].exponents;
        s["mle"] = res.per_sample[i].mle;
        s["sle"] = res.per_sample[i].sle;
        s["floor_hits"] = res.per_sample[i].floor_hits;
        samples.push_back(std::move(s));
    }
    j["per_sample"] = std::move(samples);
    json excluded = json::array();
    for (const auto& [idx, why] : res.excluded) {
        json e;
        e["sample"] = idx;
        e["reason"] = why;
        excluded.push_back(std::move(e));
    }
    j["excluded"] = std::move(excluded);
    // per-window growth diagnostics for the first sample only (they are large)
    if (!res.per_sample.empty()) {
        const Mat& w = res.per_sample[0].window_log_growth;
        json rows = json::array();
        for (int k = 0; k < w.rows; ++k) {
            json row = json::array();
            for (int c = 0; c < w.cols; ++c) row.push_back(w(k, c));
            rows.push_back(std::move(row));
        }
        j["window_log_growth_sample0"] = std::move(rows);
    }
    write_file_atomic((fs::path(out_dir) / "spectrum.json").string(), j.dump(2) + "\n");
}

void cmd_reward_mle(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = policy_keys("policy");
    auto sk = spectrum_keys();
    allowed.insert(allowed.end(), sk.begin(), sk.end());
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    const NamedPolicy policy = parse_policy(cfg, "policy", *sys);
    const SpectrumConfig scfg = spectrum_from(cfg);
    const RewardMleResult res = reward_mle(*sys, policy.params, scfg, seed);

    KeyValueConfig resolved = base_resolved("reward-mle", *sys, seed);
    echo_policy(resolved, cfg, "policy");
    echo_spectrum(resolved, scfg);
    write_resolved(out_dir, resolved);

    std::string csv = "system,policy,seed,reward_mle,measurable,samples_used\n";
    csv += sys->info().id + "," + policy.name + "," + std::to_string(seed) + "," +
           format_double(res.value) + "," + (res.measurable ? "1" : "0") + "," +
           std::to_string(res.samples_used) + "\n";
    write_file_atomic((fs::path(out_dir) / "reward_mle.csv").string(), csv);

    json j;
    j["config"] = config_json(resolved);
    j["reward_mle"] = res.measurable ? json(res.value) : json("-inf");
    j["measurable"] = res.measurable;
    j["samples_used"] = res.samples_used;
    if (!res.measurable) j["note"] = "no measurable divergence";
    write_file_atomic((fs::path(out_dir) / "reward_mle.json").string(), j.dump(2) + "\n");
}

void cmd_diverge(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = policy_keys("policy");
    allowed.insert(allowed.end(), {"diverge.epsilon", "diverge.steps"});
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    const NamedPolicy policy = parse_policy(cfg, "policy", *sys);
    const double epsilon = cfg.get_num("diverge.epsilon", 1e-4);
    const int steps = static_cast<int>(cfg.get_int("diverge.steps", 1000));

    const State s0 = sys->sample_initial(derive_seed(seed, 0));
    const DivergenceCurve curve =
        divergence_curve(*sys, policy.params, s0, epsilon, steps, derive_seed(seed, 1));
    const double slope = log_gap_slope(curve.state_gap);

    KeyValueConfig resolved = base_resolved("diverge", *sys, seed);
    echo_policy(resolved, cfg, "policy");
    resolved.set_num("diverge.epsilon", epsilon);
    resolved.set_int("diverge.steps", steps);
    write_resolved(out_dir, resolved);

    std::string csv = "t,state_gap,reward_gap\n";
    SvgSeries state_series{"state gap", {}, {}, ""};
    SvgSeries reward_series{"reward gap", {}, {}, ""};
    for (std::size_t t = 0; t < curve.reward_gap.size(); ++t) {
        csv += std::to_string(t) + "," + format_double(curve.state_gap[t]) + "," +
               format_double(curve.reward_gap[t]) + "\n";
        state_series.x.push_back(static_cast<double>(t));
        state_series.y.push_back(curve.state_gap[t]);
        reward_series.x.push_back(static_cast<double>(t));
        reward_series.y.push_back(curve.reward_gap[t]);
    }
    write_file_atomic((fs::path(out_dir) / "diverge.csv").string(), csv);
    write_file_atomic((fs::path(out_dir) / "diverge.svg").string(),
                      svg_line_chart("Twin-trajectory separation (" + sys->info().id + ")", "step",
                                     "gap", {state_series, reward_series}));

    json j;
    j["config"] = config_json(resolved);
    j["log_gap_slope_per_step"] = slope;
    j["truncated"] = curve.truncated;
    j["points"] = curve.reward_gap.size();
    write_file_atomic((fs::path(out_dir) / "diverge.json").string(), j.dump(2) + "\n");
}

void cmd_robustness(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = policy_keys("policy");
    auto bk = policy_keys("policy_b");
    allowed.insert(allowed.end(), bk.begin(), bk.end());
    allowed.insert(allowed.end(),
                   {"robustness.sigmas", "robustness.episodes", "robustness.episode_len"});
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    std::vector<NamedPolicy> policies;
    policies.push_back(parse_policy(cfg, "policy", *sys));
    if (cfg.has("policy_b")) policies.push_back(parse_policy(cfg, "policy_b", *sys));

    const Vec sigmas = cfg.get_list("robustness.sigmas", {0.0, 0.05, 0.1, 0.2, 0.5, 1.0});
    const int episodes = static_cast<int>(cfg.get_int("robustness.episodes", 80));
    const int episode_len = static_cast<int>(cfg.get_int("robustness.episode_len", 1000));

    KeyValueConfig resolved = base_resolved("robustness", *sys, seed);
    echo_policy(resolved, cfg, "policy");
    if (cfg.has("policy_b")) echo_policy(resolved, cfg, "policy_b");
    resolved.set_list("robustness.sigmas", sigmas);
    resolved.set_int("robustness.episodes", episodes);
    resolved.set_int("robustness.episode_len", episode_len);
    write_resolved(out_dir, resolved);

    json j;
    j["config"] = config_json(resolved);
    std::vector<SvgSeries> series;
    json reports = json::array();
    for (std::size_t p = 0; p < policies.size(); ++p) {
        // both policies see the same episode seeds: a paired comparison
        const RobustnessReport report =
            robustness_sweep(*sys, policies[p].params, sigmas, episodes, episode_len, seed);
        std::string csv = "sigma,iqm,ci_low,ci_high,n_episodes\n";
        SvgSeries s{policies[p].name, {}, {}, ""};
        json rows = json::array();
        for (const auto& row : report.rows) {
            csv += format_double(row.sigma) + "," + format_double(row.iqm) + "," +
                   format_double(row.ci_low) + "," + format_double(row.ci_high) + "," +
                   std::to_string(row.episodes) + "\n";
            s.x.push_back(row.sigma);
            s.y.push_back(row.iqm);
            json r;
            r["sigma"] = row.sigma;
            r["iqm"] = row.iqm;
            r["ci"] = {row.ci_low, row.ci_high};
            r["returns"] = row.returns;
            rows.push_back(std::move(r));
        }
        const std::string suffix = policies.size() > 1 ? (p == 0 ? "_a" : "_b") : "";
        write_file_atomic((fs::path(out_dir) / ("robustness" + suffix + ".csv")).string(), csv);
        json rep;
        rep["policy"] = policies[p].name;
        rep["rows"] = std::move(rows);
        reports.push_back(std::move(rep));
        series.push_back(std::move(s));
    }
    j["reports"] = std::move(reports);
    write_file_atomic((fs::path(out_dir) / "robustness.svg").string(),
                      svg_line_chart("Return vs observation noise (" + sys->info().id + ")",
                                     "sigma", "IQM return", series));
    write_file_atomic((fs::path(out_dir) / "robustness.json").string(), j.dump(2) + "\n");
}

std::vector<int> int_list(const KeyValueConfig& cfg, const std::string& key,
                          const Vec& fallback) {
    Vec raw = cfg.get_list(key, fallback);
    std::vector<int> out;
    for (double v : raw) out.push_back(static_cast<int>(v));
    return out;
}

void cmd_train(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = spectrum_keys();
    allowed.insert(allowed.end(),
                   {"train.updates", "train.batch", "train.members", "train.horizon",
                    "train.gamma", "train.lambda", "train.entropy_weight", "train.beta",
                    "train.lr", "train.value_lr", "train.grad_clip", "train.policy_hidden",
                    "train.value_hidden", "train.init_log_std", "train.recurrent_dim",
                    "train.spectrum_every"});
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    TrainerConfig tc;
    const TrainerConfig defaults;
    tc.updates = static_cast<int>(cfg.get_int("train.updates", defaults.updates));
    tc.batch = static_cast<int>(cfg.get_int("train.batch", defaults.batch));
    tc.members = static_cast<int>(cfg.get_int("train.members", defaults.members));
    tc.horizon = static_cast<int>(cfg.get_int("train.horizon", defaults.horizon));
    tc.gamma = cfg.get_num("train.gamma", defaults.gamma);
    tc.lambda = cfg.get_num("train.lambda", defaults.lambda);
    tc.entropy_weight = cfg.get_num("train.entropy_weight", defaults.entropy_weight);
    tc.beta = cfg.get_num("train.beta", defaults.beta);
    tc.lr = cfg.get_num("train.lr", defaults.lr);
    tc.value_lr = cfg.get_num("train.value_lr", defaults.value_lr);
    tc.grad_clip = cfg.get_num("train.grad_clip", defaults.grad_clip);
    tc.policy_hidden = int_list(cfg, "train.policy_hidden", {32, 32});
    tc.value_hidden = int_list(cfg, "train.value_hidden", {32, 32});
    tc.init_log_std = cfg.get_num("train.init_log_std", defaults.init_log_std);
    tc.policy_recurrent_dim = static_cast<int>(cfg.get_int("train.recurrent_dim", 0));
    tc.spectrum_every = static_cast<int>(cfg.get_int("train.spectrum_every", 50));
    if (cfg.has("spectrum.total_steps") || cfg.has("spectrum.iterations")) {
        tc.spectrum_cfg = spectrum_from(cfg);
    } else {
        tc.spectrum_cfg = SpectrumConfig{};
        tc.spectrum_cfg.samples = static_cast<int>(cfg.get_int("spectrum.samples", 5));
        tc.spectrum_cfg.epsilon = cfg.get_num("spectrum.epsilon", 1e-4);
    }
    tc.seed = seed;

    const TrainResult result = train(*sys, tc);

    KeyValueConfig resolved = base_resolved("train", *sys, seed);
    resolved.set_int("train.updates", tc.updates);
    resolved.set_int("train.batch", tc.batch);
    resolved.set_int("train.members", tc.members);
    resolved.set_int("train.horizon", tc.horizon);
    resolved.set_num("train.gamma", tc.gamma);
    resolved.set_num("train.lambda", tc.lambda);
    resolved.set_num("train.entropy_weight", tc.entropy_weight);
    resolved.set_num("train.beta", tc.beta);
    resolved.set_num("train.lr", tc.lr);
    resolved.set_num("train.value_lr", tc.value_lr);
    resolved.set_num("train.grad_clip", tc.grad_clip);
    {
        Vec ph(tc.policy_hidden.begin(), tc.policy_hidden.end());
        Vec vh(tc.value_hidden.begin(), tc.value_hidden.end());
        resolved.set_list("train.policy_hidden", ph);
        resolved.set_list("train.value_hidden", vh);
    }
    resolved.set_num("train.init_log_std", tc.init_log_std);
    resolved.set_int("train.recurrent_dim", tc.policy_recurrent_dim);
    resolved.set_int("train.spectrum_every", tc.spectrum_every);
    echo_spectrum(resolved, tc.spectrum_cfg);
    write_resolved(out_dir, resolved);

    const std::string weights_path = (fs::path(out_dir) / "weights.txt").string();
    {
        const std::string tmp = weights_path + ".tmp";
        save_weights(result.policy, tmp);
        std::error_code ec;
        fs::rename(tmp, weights_path, ec);
        if (ec) throw ConfigError("cannot write '" + weights_path + "'");
    }

    std::string csv = "update,return_iqm,reg_loss,mle\n";
    SvgSeries ret{"return IQM", {}, {}, ""};
    SvgSeries mle{"MLE (nats/step)", {}, {}, ""};
    for (const auto& row : result.history) {
        csv += std::to_string(row.update) + "," + format_double(row.return_iqm) + "," +
               format_double(row.reg_loss) + "," + format_double(row.mle) + "\n";
        ret.x.push_back(row.update);
        ret.y.push_back(row.return_iqm);
        mle.x.push_back(row.update);
        mle.y.push_back(row.mle);
    }
    write_file_atomic((fs::path(out_dir) / "history.csv").string(), csv);
    write_file_atomic((fs::path(out_dir) / "history.svg").string(),
                      svg_line_chart("Training history (" + sys->info().id + ")", "update",
                                     "value", {ret, mle}));

    json j;
    j["config"] = config_json(resolved);
    j["final_mle_per_step"] = result.history.empty() ? 0.0 : result.history.back().mle;
    j["final_return_iqm"] = result.history.empty() ? 0.0 : result.history.back().return_iqm;
    j["weights"] = "weights.txt";
    write_file_atomic((fs::path(out_dir) / "train.json").string(), j.dump(2) + "\n");
}

void cmd_ablate(const KeyValueConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    auto allowed = policy_keys("policy");
    auto sk = spectrum_keys();
    allowed.insert(allowed.end(), sk.begin(), sk.end());
    allowed.insert(allowed.end(), {"ablate.iterations", "ablate.samples", "ablate.repeats"});
    validate_keys(cfg, allowed);

    auto sys = make_system(cfg);
    const NamedPolicy policy = parse_policy(cfg, "policy", *sys);
    const SpectrumConfig base = spectrum_from(cfg);
    const std::vector<int> iteration_settings = int_list(cfg, "ablate.iterations", {1, 10, 100});
    const std::vector<int> sample_settings = int_list(cfg, "ablate.samples", {1, 5, 20});
    const int repeats = static_cast<int>(cfg.get_int("ablate.repeats", 5));

    KeyValueConfig resolved = base_resolved("ablate", *sys, seed);
    echo_policy(resolved, cfg, "policy");
    echo_spectrum(resolved, base);
    {
        Vec it(iteration_settings.begin(), iteration_settings.end());
        Vec sm(sample_settings.begin(), sample_settings.end());
        resolved.set_list("ablate.iterations", it);
        resolved.set_list("ablate.samples", sm);
        resolved.set_int("ablate.repeats", repeats);
    }
    write_resolved(out_dir, resolved);

    std::string csv = "sweep,setting,seed,mle,sle,ci_low,ci_high\n";
    SvgSeries it_series{"iterations sweep", {}, {}, ""};
    SvgSeries sm_series{"samples sweep", {}, {}, ""};
    for (int k : iteration_settings) {
        SpectrumConfig c = base;
        c.iterations = k;
        c.total_steps = static_cast<long long>(k) * c.norm_period;
        for (int r = 0; r < repeats; ++r) {
            const std::uint64_t run_seed = derive_seed(seed, 50000 + static_cast<std::uint64_t>(r));
            const auto res = spectrum_over_samples(*sys, policy.params, c, run_seed);
            csv += "iterations," + std::to_string(k) + "," + std::to_string(run_seed) + "," +
                   format_double(res.mle_iqm) + "," + format_double(res.sle_iqm) + "," +
                   format_double(res.mle_ci.first) + "," + format_double(res.mle_ci.second) + "\n";
            it_series.x.push_back(k);
            it_series.y.push_back(res.mle_iqm);
        }
    }
    for (int n : sample_settings) {
        SpectrumConfig c = base;
        c.samples = n;
        for (int r = 0; r < repeats; ++r) {
            const std::uint64_t run_seed = derive_seed(seed, 60000 + static_cast<std::uint64_t>(r));
            const auto res = spectrum_over_samples(*sys, policy.params, c, run_seed);
            csv += "samples," + std::to_string(n) + "," + std::to_string(run_seed) + "," +
                   format_double(res.mle_iqm) + "," + format_double(res.sle_iqm) + "," +
                   format_double(res.mle_ci.first) + "," + format_double(res.mle_ci.second) + "\n";
            sm_series.x.push_back(n);
            sm_series.y.push_back(res.mle_iqm);
        }
    }
    write_file_atomic((fs::path(out_dir) / "ablate.csv").string(), csv);
    write_file_atomic((fs::path(out_dir) / "ablate.svg").string(),
                      svg_line_chart("Estimator ablations (" + sys->info().id + ")", "setting",
                                     "MLE (nats/step)", {it_series, sm_series}));

    json j;
    j["config"] = config_json(resolved);
    j["csv"] = "ablate.csv";
    write_file_atomic((fs::path(out_dir) / "ablate.json").string(), j.dump(2) + "\n");
}

}  // namespace

void run_command(const std::string& command, const KeyValueConfig& cfg, const std::string& out_dir,
                 std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw ConfigError("cannot create output directory '" + out_dir + "'");
    if (command == "spectrum")
        cmd_spectrum(cfg, out_dir, seed);
    else if (command == "reward-mle")
        cmd_reward_mle(cfg, out_dir, seed);
    else if (command == "diverge")
        cmd_diverge(cfg, out_dir, seed);
    else if (command == "robustness")
        cmd_robustness(cfg, out_dir, seed);
    else if (command == "train")
        cmd_train(cfg, out_dir, seed);
    else if (command == "ablate")
        cmd_ablate(cfg, out_dir, seed);
    else
        throw ConfigError("unknown command '" + command + "'");
}

int main_entry(int argc, char** argv) {
    CLI::App app{"chaoscope: Lyapunov-spectrum analysis of closed-loop control systems"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config;
        std::string out;
        long long seed = -1;
    };
    const std::vector<std::string> commands = {"spectrum", "reward-mle", "diverge",
                                               "robustness", "train", "ablate"};
    const std::vector<std::string> descriptions = {
        "estimate the Lyapunov spectrum and classify stability",
        "estimate the reward-trajectory divergence exponent",
        "emit twin-trajectory divergence curves",
        "sweep observation-noise levels and report IQM returns",
        "train a policy with the divergence regularizer",
        "sweep estimator iterations and sample counts"};
    std::map<std::string, SubArgs> args;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        auto* sub = app.add_subcommand(commands[i], descriptions[i]);
        auto& a = args[commands[i]];
        sub->add_option("--config", a.config, "key-value config file")->required();
        sub->add_option("--seed", a.seed, "master seed (overrides the config)");
        sub->add_option("--out", a.out, "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const SubArgs& a = args[command];
    try {
        const KeyValueConfig cfg = KeyValueConfig::parse_file(a.config);
        std::uint64_t seed = 0;
        if (a.seed >= 0)
            seed = static_cast<std::uint64_t>(a.seed);
        else
            seed = cfg.get_u64("seed", 0);
        std::string out_dir = a.out;
        if (out_dir.empty()) out_dir = cfg.get_str("out", "");
        if (out_dir.empty()) {
            const char* env = std::getenv("CHAOSCOPE_OUT");
            out_dir = env != nullptr && *env != '\0' ? env : "chaoscope_out";
        }
        run_command(command, cfg, out_dir, seed);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "chaoscope: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "chaoscope: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace chaoscope::cli
