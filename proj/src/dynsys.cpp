#include "chaoscope/dynsys.hpp"

#include <algorithm>
#include <cmath>

#include "chaoscope/policy.hpp"
#include "chaoscope/rng.hpp"

namespace chaoscope {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

State System::step(const State& s, const Action& a) const {
    if (static_cast<int>(s.size()) != info_.state_dim)
        throw ConfigError("step: state has dim " + std::to_string(s.size()) + ", system '" +
                          info_.id + "' expects " + std::to_string(info_.state_dim));
    if (!all_finite(s)) throw NumericError("non-finite state");
    if (static_cast<int>(a.size()) != info_.action_dim)
        throw ConfigError("step: action has dim " + std::to_string(a.size()) + ", system '" +
                          info_.id + "' expects " + std::to_string(info_.action_dim));
    if (!all_finite(a)) throw NumericError("non-finite action");
    return step_impl(s, clamp_action(a));
}

Action System::clamp_action(const Action& a) const {
    Action out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(std::max(out[i], info_.bounds.lo[i]), info_.bounds.hi[i]);
    return out;
}

namespace detail {

Vec rk4_step(const Vec& s, double dt, const Deriv& f) {
    const Vec k1 = f(s);
    Vec s2 = s;
    axpy(dt / 2.0, k1, s2);
    const Vec k2 = f(s2);
    Vec s3 = s;
    axpy(dt / 2.0, k2, s3);
    const Vec k3 = f(s3);
    Vec s4 = s;
    axpy(dt, k3, s4);
    const Vec k4 = f(s4);
    Vec out = s;
    for (std::size_t i = 0; i < s.size(); ++i)
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
}

int rk4_step_tape(ad::Tape& tape, int s, double dt, const DerivTape& f) {
    const int k1 = f(tape, s);
    const int s2 = tape.add(s, tape.scale(k1, dt / 2.0));
    const int k2 = f(tape, s2);
    const int s3 = tape.add(s, tape.scale(k2, dt / 2.0));
    const int k3 = f(tape, s3);
    const int s4 = tape.add(s, tape.scale(k3, dt));
    const int k4 = f(tape, s4);
    const int acc = tape.add(tape.add(k1, tape.scale(k2, 2.0)),
                             tape.add(tape.scale(k3, 2.0), k4));
    return tape.add(s, tape.scale(acc, dt / 6.0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logistic map: s' = a s (1 - s), clamped into the declared state space
// [0, 1]. The action is the growth rate. Without the clamp a perturbed
// companion nudged past 1 would leave the unit interval, where the map
// diverges.
// ---------------------------------------------------------------------------

class LogisticSystem final : public System {
  public:
    LogisticSystem(std::string id, std::string reward_id, double band_center, double band_width)
        : band_center_(band_center), band_width_(band_width) {
        info_.id = std::move(id);
        info_.state_dim = 1;
        info_.action_dim = 1;
        info_.bounds = {{0.0}, {4.0}};
        info_.dt = 0.0;
        info_.reward_id = std::move(reward_id);
        info_.r_min = 0.0;
        info_.r_max = 1.0;
    }

    double reward(const State& s, const Action&) const override {
        if (info_.reward_id == "band")
            return std::exp(-((s[0] - band_center_) / band_width_) * ((s[0] - band_center_) / band_width_));
        return std::min(std::max(s[0], 0.0), 1.0);  // "state"
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        return {rng.uniform(0.1, 0.9)};
    }

    int step_tape(ad::Tape& tape, int s, int a) const override {
        const int ac = tape.clamp(a, 0.0, 4.0);
        // a * s * (1 - s)
        const int one_minus = tape.add_const(tape.scale(s, -1.0), 1.0);
        return tape.clamp(tape.mul(ac, tape.mul(s, one_minus)), 0.0, 1.0);
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set("system.reward", info_.reward_id);
        if (info_.reward_id == "band") {
            kv.set_num("system.band_center", band_center_);
            kv.set_num("system.band_width", band_width_);
        }
        return kv;
    }

  private:
    State step_impl(const State& s, const Action& a) const override {
        return {std::min(std::max(a[0] * s[0] * (1.0 - s[0]), 0.0), 1.0)};
    }

    double band_center_;
    double band_width_;
};

// ---------------------------------------------------------------------------
// Henon map: x' = 1 - a x^2 + y, y' = b x. No action.
// ---------------------------------------------------------------------------

class HenonSystem final : public System {
  public:
    HenonSystem(double a, double b) : a_(a), b_(b) {
        info_.id = "henon";
        info_.state_dim = 2;
        info_.action_dim = 0;
        info_.dt = 0.0;
        info_.reward_id = "gauss";
        info_.r_min = 0.0;
        info_.r_max = 1.0;
    }

    double reward(const State& s, const Action&) const override {
        return std::exp(-(s[0] * s[0] + s[1] * s[1]));
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        return {rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2)};
    }

    int step_tape(ad::Tape& tape, int s, int) const override {
        const int x = tape.pick(s, 0);
        const int y = tape.pick(s, 1);
        const int xn = tape.add_const(tape.add(tape.scale(tape.square(x), -a_), y), 1.0);
        const int yn = tape.scale(x, b_);
        return tape.pack({xn, yn});
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set_num("system.a", a_);
        kv.set_num("system.b", b_);
        return kv;
    }

  private:
    State step_impl(const State& s, const Action&) const override {
        return {1.0 - a_ * s[0] * s[0] + s[1], b_ * s[0]};
    }

    double a_;
    double b_;
};

// ---------------------------------------------------------------------------
// Lorenz flow: dx = sigma (y - x), dy = x (rho - z) - y, dz = x y - beta z.
// One step advances dt via `substeps` chained RK4 stages; the Lorenz field's
// high derivatives make a single dt = 0.01 stage noticeably inaccurate
// (~1e-6 relative per step), while ten stages land near 1e-10. No action.
// ---------------------------------------------------------------------------

class LorenzSystem final : public System {
  public:
    LorenzSystem(double sigma, double rho, double beta, double dt, int substeps)
        : sigma_(sigma), rho_(rho), beta_(beta), substeps_(substeps) {
        if (substeps < 1) throw ConfigError("lorenz: substeps must be >= 1");
        info_.id = "lorenz";
        info_.state_dim = 3;
        info_.action_dim = 0;
        info_.dt = dt;
        info_.reward_id = "gauss_z";
        info_.r_min = 0.0;
        info_.r_max = 1.0;
    }

    double reward(const State& s, const Action&) const override {
        const double z = (s[2] - 25.0) / 20.0;
        return std::exp(-z * z);
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        return {rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(15.0, 35.0)};
    }

    int step_tape(ad::Tape& tape, int s, int) const override {
        auto deriv = [this](ad::Tape& t, int state) {
            const int x = t.pick(state, 0);
            const int y = t.pick(state, 1);
            const int z = t.pick(state, 2);
            const int dx = t.scale(t.sub(y, x), sigma_);
            const int dy = t.sub(t.mul(x, t.add_const(t.scale(z, -1.0), rho_)), y);
            const int dz = t.sub(t.mul(x, y), t.scale(z, beta_));
            return t.pack({dx, dy, dz});
        };
        int cur = s;
        for (int k = 0; k < substeps_; ++k)
            cur = detail::rk4_step_tape(tape, cur, info_.dt / substeps_, deriv);
        return cur;
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set_num("system.sigma", sigma_);
        kv.set_num("system.rho", rho_);
        kv.set_num("system.beta", beta_);
        kv.set_num("system.dt", info_.dt);
        kv.set_int("system.substeps", substeps_);
        return kv;
    }

  private:
    State step_impl(const State& s, const Action&) const override {
        auto deriv = [this](const Vec& v) -> Vec {
            return {sigma_ * (v[1] - v[0]), v[0] * (rho_ - v[2]) - v[1],
                    v[0] * v[1] - beta_ * v[2]};
        };
        State cur = s;
        for (int k = 0; k < substeps_; ++k)
            cur = detail::rk4_step(cur, info_.dt / substeps_, deriv);
        return cur;
    }

    double sigma_;
    double rho_;
    double beta_;
    int substeps_;
};

// ---------------------------------------------------------------------------
// Point mass: state (x, y, vx, vy), 2-D force action, viscous damping.
// m v' = F - c v. Reward peaks at the origin.
// ---------------------------------------------------------------------------

class PointmassSystem final : public System {
  public:
    PointmassSystem(double mass, double damping, double dt, double force_bound)
        : mass_(mass), damping_(damping) {
        info_.id = "pointmass";
        info_.state_dim = 4;
        info_.action_dim = 2;
        info_.bounds = {{-force_bound, -force_bound}, {force_bound, force_bound}};
        info_.dt = dt;
        info_.reward_id = "goal";
        info_.r_min = 0.0;
        info_.r_max = 1.0;
    }

    double reward(const State& s, const Action&) const override {
        // exp(-(x^2 + y^2) / (2 * 0.1^2)): goal at the origin, 0.1 m scale.
        return std::exp(-(s[0] * s[0] + s[1] * s[1]) / 0.02);
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        return {rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), 0.0, 0.0};
    }

    int step_tape(ad::Tape& tape, int s, int a) const override {
        const int ac = tape.clamp(a, info_.bounds.lo[0], info_.bounds.hi[0]);
        auto deriv = [this, ac](ad::Tape& t, int state) {
            const int vel = t.slice(state, 2, 2);
            const int acc = t.scale(t.add(ac, t.scale(vel, -damping_)), 1.0 / mass_);
            return t.pack({vel, acc});
        };
        return detail::rk4_step_tape(tape, s, info_.dt, deriv);
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set_num("system.mass", mass_);
        kv.set_num("system.damping", damping_);
        kv.set_num("system.dt", info_.dt);
        kv.set_num("system.force_bound", info_.bounds.hi[0]);
        return kv;
    }

  private:
    State step_impl(const State& s, const Action& a) const override {
        auto deriv = [this, &a](const Vec& v) -> Vec {
            return {v[2], v[3], (a[0] - damping_ * v[2]) / mass_, (a[1] - damping_ * v[3]) / mass_};
        };
        return detail::rk4_step(s, info_.dt, deriv);
    }

    double mass_;
    double damping_;
};

// ---------------------------------------------------------------------------
// Cart-pole: state (x, v, theta, omega) with theta = 0 pole upright. The pole
// is a uniform rod of mass m and half-length l pivoting on a cart of mass M
// driven by a horizontal force F. Equations of motion from the Lagrangian:
//
//   (M + m) x'' + m l theta'' cos(theta) - m l omega^2 sin(theta) = F - cx v
//   m l x'' cos(theta) + (4/3) m l^2 theta'' - m g l sin(theta)   = -ct omega
//
// solved for (x'', theta'') each evaluation; undamped and unactuated this
// conserves E = (M+m)v^2/2 + m l v w cos(theta) + (2/3) m l^2 w^2 + m g l cos(theta).
// ---------------------------------------------------------------------------

class CartpoleSystem final : public System {
  public:
    CartpoleSystem(std::string reward_id, double cart_mass, double pole_mass,
                   double pole_half_length, double gravity, double dt, double force_bound,
                   double damping_cart, double damping_pole)
        : M_(cart_mass), m_(pole_mass), l_(pole_half_length), g_(gravity),
          cx_(damping_cart), ct_(damping_pole) {
        info_.id = "cartpole";
        info_.state_dim = 4;
        info_.action_dim = 1;
        info_.bounds = {{-force_bound}, {force_bound}};
        info_.dt = dt;
        info_.reward_id = std::move(reward_id);
        info_.r_min = 0.0;
        info_.r_max = 1.0;
    }

    double reward(const State& s, const Action&) const override {
        const double x = s[0];
        if (info_.reward_id == "swingup") {
            // smooth shaping toward upright, bounded in [0, 1]
            return 0.5 * (std::cos(s[2]) + 1.0) * std::exp(-x * x);
        }
        // "balance": exp(-(theta/0.3)^2) * exp(-(x/1.0)^2), theta wrapped to (-pi, pi]
        const double th = std::remainder(s[2], 2.0 * kPi);
        return std::exp(-(th / 0.3) * (th / 0.3)) * std::exp(-x * x);
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        const double center = info_.reward_id == "swingup" ? kPi : 0.0;
        return {0.0, 0.0, center + rng.uniform(-0.1, 0.1), 0.0};
    }

    double energy(const State& s) const {
        const double v = s[1], th = s[2], w = s[3];
        return 0.5 * (M_ + m_) * v * v + m_ * l_ * v * w * std::cos(th) +
               (2.0 / 3.0) * m_ * l_ * l_ * w * w + m_ * g_ * l_ * std::cos(th);
    }

    int step_tape(ad::Tape& tape, int s, int a) const override {
        const int ac = tape.clamp(a, info_.bounds.lo[0], info_.bounds.hi[0]);
        auto deriv = [this, ac](ad::Tape& t, int state) {
            const int v = t.pick(state, 1);
            const int th = t.pick(state, 2);
            const int w = t.pick(state, 3);
            const int sin_th = t.sin_(th);
            const int cos_th = t.cos_(th);
            const int f = t.pick(ac, 0);
            // b1 = F - cx v + m l w^2 sin, b2 = m g l sin - ct w
            const int b1 = t.add(t.sub(f, t.scale(v, cx_)),
                                 t.scale(t.mul(t.square(w), sin_th), m_ * l_));
            const int b2 = t.sub(t.scale(sin_th, m_ * g_ * l_), t.scale(w, ct_));
            // 2x2 solve with a11 = M+m, a12 = m l cos, a22 = (4/3) m l^2
            const int a12 = t.scale(cos_th, m_ * l_);
            const double a11 = M_ + m_;
            const double a22 = (4.0 / 3.0) * m_ * l_ * l_;
            const int det = t.add_const(t.scale(t.square(a12), -1.0), a11 * a22);
            const int xdd = t.div(t.sub(t.scale(b1, a22), t.mul(a12, b2)), det);
            const int wdd = t.div(t.sub(t.scale(b2, a11), t.mul(a12, b1)), det);
            return t.pack({v, xdd, w, wdd});
        };
        return detail::rk4_step_tape(tape, s, info_.dt, deriv);
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set("system.reward", info_.reward_id);
        kv.set_num("system.cart_mass", M_);
        kv.set_num("system.pole_mass", m_);
        kv.set_num("system.pole_half_length", l_);
        kv.set_num("system.gravity", g_);
        kv.set_num("system.dt", info_.dt);
        kv.set_num("system.force_bound", info_.bounds.hi[0]);
        kv.set_num("system.damping_cart", cx_);
        kv.set_num("system.damping_pole", ct_);
        return kv;
    }

  private:
    State step_impl(const State& s, const Action& a) const override {
        auto deriv = [this, &a](const Vec& state) -> Vec {
            const double v = state[1], th = state[2], w = state[3];
            const double sin_th = std::sin(th), cos_th = std::cos(th);
            const double b1 = a[0] - cx_ * v + m_ * l_ * w * w * sin_th;
            const double b2 = m_ * g_ * l_ * sin_th - ct_ * w;
            const double a11 = M_ + m_;
            const double a12 = m_ * l_ * cos_th;
            const double a22 = (4.0 / 3.0) * m_ * l_ * l_;
            const double det = a11 * a22 - a12 * a12;
            return {v, (b1 * a22 - a12 * b2) / det, w, (b2 * a11 - a12 * b1) / det};
        };
        return detail::rk4_step(s, info_.dt, deriv);
    }

    double M_;
    double m_;
    double l_;
    double g_;
    double cx_;
    double ct_;
};

// ---------------------------------------------------------------------------
// 1-D linear contraction: s' = c s + g u. Validation system whose state and
// reward divergence rates coincide analytically (both ln|c| under no action).
// ---------------------------------------------------------------------------

class Linear1dSystem final : public System {
  public:
    Linear1dSystem(std::string reward_id, double contraction, double gain)
        : c_(contraction), gain_(gain) {
        info_.id = "linear1d";
        info_.state_dim = 1;
        info_.action_dim = 1;
        info_.bounds = {{-1.0}, {1.0}};
        info_.dt = 0.0;
        info_.reward_id = std::move(reward_id);
        if (info_.reward_id == "constant") {
            info_.r_min = 1.0;
            info_.r_max = 1.0;
        } else {
            info_.r_min = -10.0;
            info_.r_max = 0.0;
        }
    }

    double reward(const State& s, const Action&) const override {
        if (info_.reward_id == "constant") return 1.0;
        return -std::min(std::fabs(s[0]), 10.0);  // "neg_abs"
    }

    State sample_initial(std::uint64_t seed) const override {
        Rng rng(seed);
        return {rng.uniform(-1.0, 1.0)};
    }

    int step_tape(ad::Tape& tape, int s, int a) const override {
        const int ac = tape.clamp(a, -1.0, 1.0);
        return tape.add(tape.scale(s, c_), tape.scale(ac, gain_));
    }

    KeyValueConfig config_echo() const override {
        KeyValueConfig kv;
        kv.set("system", info_.id);
        kv.set("system.reward", info_.reward_id);
        kv.set_num("system.contraction", c_);
        kv.set_num("system.gain", gain_);
        return kv;
    }

  private:
    State step_impl(const State& s, const Action& a) const override {
        return {c_ * s[0] + gain_ * a[0]};
    }

    double c_;
    double gain_;
};

// ---------------------------------------------------------------------------
// Factory
// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<System> build(const std::string& id, const KeyValueConfig& kv) {
    auto known = [&kv](std::vector<std::string> keys) {
        keys.push_back("system");
        std::vector<std::string> ours;
        for (const auto& [k, v] : kv.entries())
            if (k == "system" || k.rfind("system.", 0) == 0) ours.push_back(k);
        for (const auto& k : ours) {
            bool ok = false;
            for (const auto& a : keys)
                if (k == a) {
                    ok = true;
                    break;
                }
            if (!ok) throw ConfigError("system '" + std::string(kv.get_str("system", "")) +
                                       "': unknown key '" + k + "'");
        }
    };

    if (id == "logistic") {
        known({});
        return std::make_unique<LogisticSystem>("logistic", "state", 0.0, 1.0);
    }
    if (id == "logistic_control") {
        known({"system.band_center", "system.band_width"});
        return std::make_unique<LogisticSystem>("logistic_control", "band",
                                                kv.get_num("system.band_center", 0.85),
                                                kv.get_num("system.band_width", 0.15));
    }
    if (id == "henon") {
        known({"system.a", "system.b"});
        return std::make_unique<HenonSystem>(kv.get_num("system.a", 1.4),
                                             kv.get_num("system.b", 0.3));
    }
    if (id == "lorenz") {
        known({"system.sigma", "system.rho", "system.beta", "system.dt", "system.substeps"});
        return std::make_unique<LorenzSystem>(
            kv.get_num("system.sigma", 10.0), kv.get_num("system.rho", 28.0),
            kv.get_num("system.beta", 8.0 / 3.0), kv.get_num("system.dt", 0.01),
            static_cast<int>(kv.get_int("system.substeps", 10)));
    }
    if (id == "pointmass") {
        known({"system.mass", "system.damping", "system.dt", "system.force_bound"});
        return std::make_unique<PointmassSystem>(
            kv.get_num("system.mass", 1.0), kv.get_num("system.damping", 0.5),
            kv.get_num("system.dt", 0.01), kv.get_num("system.force_bound", 1.0));
    }
    if (id == "cartpole") {
        known({"system.reward", "system.cart_mass", "system.pole_mass",
               "system.pole_half_length", "system.gravity", "system.dt", "system.force_bound",
               "system.damping_cart", "system.damping_pole"});
        const std::string reward = kv.get_str("system.reward", "balance");
        if (reward != "balance" && reward != "swingup")
            throw ConfigError("cartpole reward must be 'balance' or 'swingup', got '" + reward + "'");
        return std::make_unique<CartpoleSystem>(
            reward, kv.get_num("system.cart_mass", 1.0), kv.get_num("system.pole_mass", 0.1),
            kv.get_num("system.pole_half_length", 0.5), kv.get_num("system.gravity", 9.81),
            kv.get_num("system.dt", 0.01), kv.get_num("system.force_bound", 10.0),
            kv.get_num("system.damping_cart", 0.0), kv.get_num("system.damping_pole", 0.0));
    }
    if (id == "linear1d") {
        known({"system.reward", "system.contraction", "system.gain"});
        const std::string reward = kv.get_str("system.reward", "neg_abs");
        if (reward != "neg_abs" && reward != "constant")
            throw ConfigError("linear1d reward must be 'neg_abs' or 'constant', got '" + reward + "'");
        return std::make_unique<Linear1dSystem>(reward, kv.get_num("system.contraction", 0.5),
                                                kv.get_num("system.gain", 0.1));
    }
    throw ConfigError("unknown system '" + id + "'");
}

}  // namespace

std::unique_ptr<System> make_system(const std::string& id) {
    KeyValueConfig kv;
    kv.set("system", id);
    return build(id, kv);
}

std::unique_ptr<System> make_system(const KeyValueConfig& cfg) {
    return build(cfg.get_str("system"), cfg);
}

std::vector<std::string> system_ids() {
    return {"logistic", "logistic_control", "henon", "lorenz", "pointmass", "cartpole", "linear1d"};
}

// ---------------------------------------------------------------------------
// Closed-loop operations
// ---------------------------------------------------------------------------

Trajectory rollout(const System& sys, const PolicyParams& policy, const State& s0, int T,
                   const NoiseConfig& noise, std::uint64_t seed) {
    if (T < 1) throw ConfigError("rollout: T must be >= 1");
    if (noise.sigma < 0.0) throw ConfigError("rollout: sigma must be >= 0");
    if (!noise.scale.empty() && static_cast<int>(noise.scale.size()) != sys.info().state_dim)
        throw ConfigError("rollout: noise scale dimension mismatch");

    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(T) + 1);
    traj.observations.reserve(static_cast<std::size_t>(T));
    traj.actions.reserve(static_cast<std::size_t>(T));
    traj.rewards.reserve(static_cast<std::size_t>(T));

    Rng rng(seed);
    State s = s0;
    traj.states.push_back(s);
    HiddenState h = initial_hidden(policy);
    for (int t = 0; t < T; ++t) {
        if (!all_finite(s)) throw NumericError("non-finite state in rollout", t);
        State obs = s;
        if (noise.sigma > 0.0)
            for (std::size_t i = 0; i < obs.size(); ++i) {
                const double sc = noise.scale.empty() ? 1.0 : noise.scale[i];
                obs[i] += noise.sigma * sc * rng.normal();
            }
        auto out = act_mean(policy, obs, h);
        h = out.next;
        const State next = sys.step(s, out.mean);
        if (!all_finite(next)) throw NumericError("non-finite state in rollout", t + 1);
        traj.observations.push_back(std::move(obs));
        traj.rewards.push_back(sys.reward(s, out.mean));
        traj.actions.push_back(std::move(out.mean));
        traj.states.push_back(next);
        s = traj.states.back();
    }
    return traj;
}

double discounted_return(const Vec& rewards, double gamma) {
    if (gamma < 0.0 || gamma >= 1.0)
        throw ConfigError("discounted_return: gamma must be in [0, 1)");
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) acc = rewards[i] + gamma * acc;
    return acc;
}

Mat closed_loop_jacobian(const System& sys, const PolicyParams& policy, const State& s) {
    if (policy.hidden_dim > 0)
        throw ConfigError("closed_loop_jacobian requires a memoryless policy");
    if (!all_finite(s)) throw NumericError("non-finite state");
    ad::Tape tape;
    const int s_node = tape.input(s);
    const int p_node = policy.flat.empty() ? -1 : tape.constant(policy.flat);
    const auto fwd = policy_tape_forward(tape, policy, p_node, s_node, -1);
    const int next = sys.step_tape(tape, s_node, fwd.mean);

    const int n = sys.info().state_dim;
    Mat jac(n, n);
    for (int i = 0; i < n; ++i) {
        const int out = tape.pick(next, i);
        tape.backward(out);
        for (int j = 0; j < n; ++j) jac(i, j) = tape.grad(s_node)[static_cast<std::size_t>(j)];
    }
    return jac;
}

}  // namespace chaoscope
