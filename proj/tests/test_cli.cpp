#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "chaoscope/report.hpp"

namespace fs = std::filesystem;

namespace {

std::string bin_path() {
    const char* bin = std::getenv("CHAOSCOPE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "CHAOSCOPE_BIN must point at the chaoscope binary");
    return bin;
}

std::string configs_dir() {
    const char* dir = std::getenv("CHAOSCOPE_CONFIGS");
    REQUIRE_MESSAGE(dir != nullptr, "CHAOSCOPE_CONFIGS must point at the preset directory");
    return dir;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("chaoscope_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
    const int status = std::system((bin_path() + " " + args).c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) { return chaoscope::read_file(p.string()); }

void write(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

TEST_CASE("spectrum command on the henon preset") {
    TempDir tmp("spectrum");
    const int code = run("spectrum --config " + configs_dir() + "/henon_spectrum.cfg --out " +
                         tmp.path.string() + " > /dev/null 2>&1");
    REQUIRE(code == 0);
    const auto rows = parse_csv(slurp(tmp.path / "spectrum_summary.csv"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == std::vector<std::string>{"system", "policy", "seed", "mle", "sle", "class"});
    CHECK(rows[1][0] == "henon");
    CHECK(rows[1][1] == "none");
    CHECK(std::fabs(std::stod(rows[1][3]) - 0.419) <= 0.02);
    CHECK(rows[1][5] == "Chaotic");
    CHECK(fs::exists(tmp.path / "resolved_config.cfg"));
    CHECK(slurp(tmp.path / "spectrum.json").find("\"config\"") != std::string::npos);
}

TEST_CASE("spectrum command classifies the uncontrolled pointmass as stable") {
    TempDir tmp("pm");
    REQUIRE(run("spectrum --config " + configs_dir() +
                "/pointmass_noaction_spectrum.cfg --out " + tmp.path.string() +
                " > /dev/null 2>&1") == 0);
    const auto rows = parse_csv(slurp(tmp.path / "spectrum_summary.csv"));
    CHECK(rows[1][5] == "Stable");
}

TEST_CASE("missing weight files exit with code 2 and name the path") {
    TempDir tmp("missing");
    write(tmp.path / "bad.cfg",
          "system = henon\npolicy = file\npolicy.path = /nonexistent/w.txt\n");
    const int code = run("spectrum --config " + (tmp.path / "bad.cfg").string() + " --out " +
                         tmp.path.string() + " 2> " + (tmp.path / "err.txt").string());
    CHECK(code == 2);
    CHECK(slurp(tmp.path / "err.txt").find("/nonexistent/w.txt") != std::string::npos);
}

TEST_CASE("unknown config keys exit with code 2") {
    TempDir tmp("unknown");
    write(tmp.path / "typo.cfg", "system = henon\nspektrum.samples = 5\n");
    const int code = run("spectrum --config " + (tmp.path / "typo.cfg").string() + " --out " +
                         tmp.path.string() + " 2> " + (tmp.path / "err.txt").string());
    CHECK(code == 2);
    CHECK(slurp(tmp.path / "err.txt").find("spektrum.samples") != std::string::npos);
}

TEST_CASE("numerical failures exit with code 1") {
    TempDir tmp("blowup");
    write(tmp.path / "unstable.cfg",
          "system = linear1d\nsystem.contraction = 3.0\npolicy = none\n"
          "spectrum.total_steps = 100000\nspectrum.samples = 2\n");
    const int code = run("spectrum --config " + (tmp.path / "unstable.cfg").string() + " --out " +
                         tmp.path.string() + " 2> /dev/null");
    CHECK(code == 1);
}

TEST_CASE("reward-mle command emits the documented schema") {
    TempDir tmp("rmle");
    SUBCASE("contracting preset reports a negative exponent") {
        REQUIRE(run("reward-mle --config " + configs_dir() + "/linear1d_reward_mle.cfg --out " +
                    tmp.path.string() + " > /dev/null 2>&1") == 0);
        const auto rows = parse_csv(slurp(tmp.path / "reward_mle.csv"));
        REQUIRE(rows.size() == 2);
        CHECK(rows[0] == std::vector<std::string>{"system", "policy", "seed", "reward_mle",
                                                  "measurable", "samples_used"});
        CHECK(std::stod(rows[1][3]) < 0.0);
        CHECK(rows[1][4] == "1");
    }
    SUBCASE("constant-reward preset is flagged as a sentinel") {
        REQUIRE(run("reward-mle --config " + configs_dir() +
                    "/linear1d_constant_reward_mle.cfg --out " + tmp.path.string() +
                    " > /dev/null 2>&1") == 0);
        const auto rows = parse_csv(slurp(tmp.path / "reward_mle.csv"));
        CHECK(rows[1][3] == "-inf");
        CHECK(rows[1][4] == "0");
        CHECK(slurp(tmp.path / "reward_mle.json").find("no measurable divergence") !=
              std::string::npos);
    }
}

TEST_CASE("diverge command") {
    SUBCASE("zero perturbation writes a flat-zero curve") {
        TempDir tmp("div0");
        write(tmp.path / "zero.cfg",
              "system = henon\npolicy = none\ndiverge.epsilon = 0\ndiverge.steps = 50\nseed = 3\n");
        REQUIRE(run("diverge --config " + (tmp.path / "zero.cfg").string() + " --out " +
                    tmp.path.string() + " > /dev/null 2>&1") == 0);
        const auto rows = parse_csv(slurp(tmp.path / "diverge.csv"));
        REQUIRE(rows.size() == 51);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(std::stod(rows[i][1]) == 0.0);
            CHECK(std::stod(rows[i][2]) == 0.0);
        }
    }
    SUBCASE("henon preset: SVG points match the CSV and the slope matches the exponent") {
        TempDir tmp("divh");
        REQUIRE(run("diverge --config " + configs_dir() + "/henon_diverge.cfg --out " +
                    tmp.path.string() + " > /dev/null 2>&1") == 0);
        const auto rows = parse_csv(slurp(tmp.path / "diverge.csv"));
        REQUIRE(rows.size() > 100);

        // rebuild both series exactly as the command plots them
        chaoscope::SvgSeries state{"state gap", {}, {}, ""};
        chaoscope::SvgSeries reward{"reward gap", {}, {}, ""};
        for (std::size_t i = 1; i < rows.size(); ++i) {
            state.x.push_back(std::stod(rows[i][0]));
            state.y.push_back(std::stod(rows[i][1]));
            reward.x.push_back(std::stod(rows[i][0]));
            reward.y.push_back(std::stod(rows[i][2]));
        }
        const auto transform = chaoscope::svg_transform_for({state, reward});
        const std::string svg = slurp(tmp.path / "diverge.svg");
        for (std::size_t idx : {std::size_t{1}, state.x.size() / 2, state.x.size() - 1}) {
            const std::string point =
                chaoscope::svg_point(transform, state.x[idx], state.y[idx]);
            CHECK(svg.find(point) != std::string::npos);
        }

        const std::string json = slurp(tmp.path / "diverge.json");
        const auto pos = json.find("log_gap_slope_per_step");
        REQUIRE(pos != std::string::npos);
        const double slope = std::stod(json.substr(json.find(':', pos) + 1));
        CHECK(std::fabs(slope - 0.4205) <= 0.05);
    }
}

TEST_CASE("robustness command emits one row per sigma and reruns byte-identically") {
    TempDir tmp("rob");
    const std::string cmd = "robustness --config " + configs_dir() +
                            "/cartpole_robustness.cfg --out " + tmp.path.string() +
                            " > /dev/null 2>&1";
    REQUIRE(run(cmd) == 0);
    const std::string csv1 = slurp(tmp.path / "robustness.csv");
    const std::string json1 = slurp(tmp.path / "robustness.json");
    const auto rows = parse_csv(csv1);
    REQUIRE(rows.size() == 4);  // header + 3 sigmas
    CHECK(rows[0] ==
          std::vector<std::string>{"sigma", "iqm", "ci_low", "ci_high", "n_episodes"});
    REQUIRE(run(cmd) == 0);
    CHECK(slurp(tmp.path / "robustness.csv") == csv1);
    CHECK(slurp(tmp.path / "robustness.json") == json1);
}

TEST_CASE("robustness command compares two policies") {
    TempDir tmp("rob2");
    write(tmp.path / "two.cfg",
          "system = logistic_control\npolicy = constant\npolicy.constant = 2.5\n"
          "policy_b = constant\npolicy_b.constant = 3.9\n"
          "robustness.sigmas = 0 0.2\nrobustness.episodes = 10\n"
          "robustness.episode_len = 100\nseed = 4\n");
    REQUIRE(run("robustness --config " + (tmp.path / "two.cfg").string() + " --out " +
                tmp.path.string() + " > /dev/null 2>&1") == 0);
    CHECK(fs::exists(tmp.path / "robustness_a.csv"));
    CHECK(fs::exists(tmp.path / "robustness_b.csv"));
    CHECK(parse_csv(slurp(tmp.path / "robustness_a.csv")).size() == 3);
    CHECK(parse_csv(slurp(tmp.path / "robustness_b.csv")).size() == 3);
}

TEST_CASE("spectrum command reruns byte-identically") {
    TempDir tmp("repro");
    const std::string cmd = "spectrum --config " + configs_dir() +
                            "/logistic_spectrum.cfg --out " + tmp.path.string() +
                            " > /dev/null 2>&1";
    REQUIRE(run(cmd) == 0);
    const std::string csv = slurp(tmp.path / "spectrum_summary.csv");
    const std::string json = slurp(tmp.path / "spectrum.json");
    const std::string resolved = slurp(tmp.path / "resolved_config.cfg");
    REQUIRE(run(cmd) == 0);
    CHECK(slurp(tmp.path / "spectrum_summary.csv") == csv);
    CHECK(slurp(tmp.path / "spectrum.json") == json);
    CHECK(slurp(tmp.path / "resolved_config.cfg") == resolved);
}

TEST_CASE("train command writes loadable weights and a history") {
    TempDir tmp("train");
    write(tmp.path / "tiny.cfg",
          "system = logistic_control\ntrain.updates = 4\ntrain.batch = 2\ntrain.members = 2\n"
          "train.horizon = 4\ntrain.policy_hidden = 8\ntrain.value_hidden = 8\n"
          "train.spectrum_every = 100\nseed = 3\n");
    const std::string cmd = "train --config " + (tmp.path / "tiny.cfg").string() + " --out " +
                            tmp.path.string() + " > /dev/null 2>&1";
    REQUIRE(run(cmd) == 0);
    const auto rows = parse_csv(slurp(tmp.path / "history.csv"));
    REQUIRE(rows.size() == 5);  // header + 4 updates
    CHECK(rows[0] == std::vector<std::string>{"update", "return_iqm", "reg_loss", "mle"});
    CHECK(fs::exists(tmp.path / "weights.txt"));
    CHECK(fs::exists(tmp.path / "history.svg"));
    const std::string history = slurp(tmp.path / "history.csv");
    REQUIRE(run(cmd) == 0);
    CHECK(slurp(tmp.path / "history.csv") == history);

    // the emitted weights run through the spectrum command
    write(tmp.path / "spec.cfg", "system = logistic_control\npolicy = file\npolicy.path = " +
                                     (tmp.path / "weights.txt").string() +
                                     "\nspectrum.samples = 2\nseed = 1\n");
    CHECK(run("spectrum --config " + (tmp.path / "spec.cfg").string() + " --out " +
              tmp.path.string() + " > /dev/null 2>&1") == 0);
}

TEST_CASE("ablate command sweeps iterations and sample counts") {
    TempDir tmp("ablate");
    const std::string cmd = "ablate --config " + configs_dir() + "/henon_ablate.cfg --out " +
                            tmp.path.string() + " > /dev/null 2>&1";
    REQUIRE(run(cmd) == 0);
    const std::string first = slurp(tmp.path / "ablate.csv");
    REQUIRE(run(cmd) == 0);
    CHECK(slurp(tmp.path / "ablate.csv") == first);
    const auto rows = parse_csv(first);
    REQUIRE(rows.size() == 19);  // header + (3 settings x 3 repeats) x 2 sweeps
    CHECK(rows[0] == std::vector<std::string>{"sweep", "setting", "seed", "mle", "sle", "ci_low",
                                              "ci_high"});
    int iteration_rows = 0, sample_rows = 0;
    std::vector<double> converged;
    std::vector<double> width5, width20;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i][0] == "iterations") {
            ++iteration_rows;
            if (rows[i][1] == "100") converged.push_back(std::stod(rows[i][3]));
        } else {
            ++sample_rows;
            const double width = std::stod(rows[i][6]) - std::stod(rows[i][5]);
            if (rows[i][1] == "5") width5.push_back(width);
            if (rows[i][1] == "20") width20.push_back(width);
        }
    }
    CHECK(iteration_rows == 9);
    CHECK(sample_rows == 9);
    // converged iteration setting sits near the long-run exponent
    for (double m : converged) CHECK(std::fabs(m - 0.42) <= 0.05);
    // bootstrap width shrinks with the sample count (medians over repeats;
    // the single-sample setting has no interval by definition)
    auto median3 = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    CHECK(median3(width5) >= median3(width20));
}

TEST_CASE("the default output directory comes from the environment") {
    TempDir tmp("envout");
    const fs::path out = tmp.path / "from_env";
    const std::string cmd = "cd " + tmp.path.string() + " && CHAOSCOPE_OUT=" + out.string() + " " +
                            bin_path() + " reward-mle --config " + configs_dir() +
                            "/linear1d_constant_reward_mle.cfg > /dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    CHECK(fs::exists(out / "reward_mle.csv"));
}
