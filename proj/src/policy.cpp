#include "chaoscope/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace chaoscope {

namespace {

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)
constexpr double kHalfLog2PiE = 1.4189385332046727418;  // 0.5 ln(2 pi e)

double clamp_log_std(double v) { return std::min(std::max(v, kLogStdMin), kLogStdMax); }

// A named span of the flat parameter vector. cols == 0 marks a plain vector.
struct Block {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
    std::size_t count() const {
        return static_cast<std::size_t>(rows) * (cols == 0 ? 1 : cols);
    }
};

std::vector<Block> blocks_of(const PolicyParams& p) {
    std::vector<Block> blocks;
    std::size_t off = 0;
    auto push = [&](const std::string& name, int rows, int cols) {
        Block b{name, rows, cols, off};
        off += b.count();
        blocks.push_back(std::move(b));
    };
    switch (p.kind) {
        case PolicyKind::NoAction:
            break;
        case PolicyKind::Constant:
            if (p.action_dim > 0) push("action", p.action_dim, 0);
            break;
        case PolicyKind::Linear:
        case PolicyKind::Mlp: {
            int in = p.state_dim;
            if (p.hidden_dim > 0) {
                push("Wh", p.hidden_dim, p.hidden_dim);
                push("Ws", p.hidden_dim, p.state_dim);
                push("bh", p.hidden_dim, 0);
                in = p.hidden_dim;
            }
            std::vector<int> dims;
            dims.push_back(in);
            for (int w : p.hidden_layers) dims.push_back(w);
            dims.push_back(p.action_dim);
            for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
                push("W" + std::to_string(l), dims[l + 1], dims[l]);
                push("b" + std::to_string(l), dims[l + 1], 0);
            }
            if (p.gaussian) push("log_std", p.action_dim, 0);
            break;
        }
    }
    return blocks;
}

Vec mat_vec_block(const Vec& flat, const Block& b, const Vec& x) {
    Vec y(static_cast<std::size_t>(b.rows), 0.0);
    for (int r = 0; r < b.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < b.cols; ++c)
            s += flat[b.offset + static_cast<std::size_t>(r) * b.cols + c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = s;
    }
    return y;
}

void add_vec_block(const Vec& flat, const Block& b, Vec& y) {
    for (int r = 0; r < b.rows; ++r) y[static_cast<std::size_t>(r)] += flat[b.offset + static_cast<std::size_t>(r)];
}

// a = center + half * tanh(u / half): the pre-squash value is in action
// units (identity-like near the center, saturating at the bounds).
Vec squash(const PolicyParams& p, const Vec& u) {
    Vec out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double half = 0.5 * (p.bounds.hi[i] - p.bounds.lo[i]);
        const double center = 0.5 * (p.bounds.hi[i] + p.bounds.lo[i]);
        out[i] = half > 0.0 ? center + half * std::tanh(u[i] / half) : center;
    }
    return out;
}

// Runs the feedforward stack over blocks [first, end) where end excludes the
// trailing log_std block; returns the pre-squash mean and effective log-stds.
void forward_stack(const PolicyParams& p, const std::vector<Block>& blocks, std::size_t first,
                   const Vec& in, Vec& pre_mean, Vec& log_std) {
    const std::size_t end = blocks.size() - (p.gaussian ? 1 : 0);
    Vec x = in;
    for (std::size_t i = first; i < end; i += 2) {
        const Block& w = blocks[i];
        const Block& b = blocks[i + 1];
        Vec y = mat_vec_block(p.flat, w, x);
        add_vec_block(p.flat, b, y);
        if (i + 2 < end)
            for (auto& v : y) v = std::tanh(v);
        x = std::move(y);
    }
    pre_mean = std::move(x);
    log_std.clear();
    if (p.gaussian) {
        const Block& ls = blocks.back();
        log_std.resize(static_cast<std::size_t>(p.action_dim));
        for (int d = 0; d < p.action_dim; ++d)
            log_std[static_cast<std::size_t>(d)] = clamp_log_std(p.flat[ls.offset + static_cast<std::size_t>(d)]);
    }
}

void check_inputs(const PolicyParams& p, const State& s, const HiddenState& h) {
    if (static_cast<int>(s.size()) != p.state_dim)
        throw ConfigError("policy: state has dim " + std::to_string(s.size()) + ", expected " +
                          std::to_string(p.state_dim));
    if (static_cast<int>(h.h.size()) != p.hidden_dim)
        throw ConfigError("policy: hidden state has dim " + std::to_string(h.h.size()) +
                          ", expected " + std::to_string(p.hidden_dim));
}

// Computes pre-squash mean, log-stds and next hidden for Linear/Mlp.
void forward_net(const PolicyParams& p, const State& s, const HiddenState& h, Vec& pre_mean,
                 Vec& log_std, Vec& h_next) {
    const auto blocks = blocks_of(p);
    std::size_t first = 0;
    Vec in = s;
    if (p.hidden_dim > 0) {
        Vec hn = mat_vec_block(p.flat, blocks[0], h.h);
        const Vec hs = mat_vec_block(p.flat, blocks[1], s);
        for (std::size_t i = 0; i < hn.size(); ++i) hn[i] += hs[i];
        add_vec_block(p.flat, blocks[2], hn);
        for (auto& v : hn) v = std::tanh(v);
        in = hn;
        h_next = std::move(hn);
        first = 3;
    }
    forward_stack(p, blocks, first, in, pre_mean, log_std);
}

}  // namespace

const char* to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::NoAction: return "noaction";
        case PolicyKind::Constant: return "constant";
        case PolicyKind::Linear: return "linear";
        case PolicyKind::Mlp: return "mlp";
    }
    return "?";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "noaction") return PolicyKind::NoAction;
    if (s == "constant") return PolicyKind::Constant;
    if (s == "linear") return PolicyKind::Linear;
    if (s == "mlp") return PolicyKind::Mlp;
    throw ConfigError("unknown policy kind '" + s + "'");
}

std::size_t PolicyParams::param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_of(*this)) n += b.count();
    return n;
}

void PolicyParams::validate() const {
    if (state_dim < 1) throw ConfigError("policy: state_dim must be >= 1");
    if (action_dim < 0) throw ConfigError("policy: action_dim must be >= 0");
    if (static_cast<int>(bounds.lo.size()) != action_dim ||
        static_cast<int>(bounds.hi.size()) != action_dim)
        throw ConfigError("policy: bounds dimension mismatch");
    for (int i = 0; i < action_dim; ++i)
        if (!(bounds.lo[i] <= bounds.hi[i])) throw ConfigError("policy: bounds lo > hi");
    const bool net = kind == PolicyKind::Linear || kind == PolicyKind::Mlp;
    if (gaussian && !net) throw ConfigError("policy: only linear/mlp policies can be Gaussian");
    if (hidden_dim > 0 && !net) throw ConfigError("policy: only linear/mlp policies can be recurrent");
    if (net && action_dim < 1) throw ConfigError("policy: linear/mlp policies need action_dim >= 1");
    if (net)
        for (int i = 0; i < action_dim; ++i)
            if (!(bounds.lo[i] < bounds.hi[i]))
                throw ConfigError("policy: squashed policies need lo < hi bounds");
    if (!hidden_layers.empty() && kind != PolicyKind::Mlp)
        throw ConfigError("policy: hidden_layers only apply to mlp");
    for (int w : hidden_layers)
        if (w < 1) throw ConfigError("policy: hidden layer width must be >= 1");
    if (flat.size() != param_count())
        throw ConfigError("policy: parameter count mismatch: expected " +
                          std::to_string(param_count()) + ", found " + std::to_string(flat.size()));
}

HiddenState initial_hidden(const PolicyParams& p) {
    return {Vec(static_cast<std::size_t>(p.hidden_dim), 0.0)};
}

ActOut act_mean(const PolicyParams& p, const State& s, const HiddenState& h) {
    check_inputs(p, s, h);
    ActOut out;
    out.next = h;
    switch (p.kind) {
        case PolicyKind::NoAction:
            out.mean.assign(static_cast<std::size_t>(p.action_dim), 0.0);
            return out;
        case PolicyKind::Constant: {
            out.mean.assign(p.flat.begin(), p.flat.end());
            for (int i = 0; i < p.action_dim; ++i)
                out.mean[static_cast<std::size_t>(i)] = std::min(
                    std::max(out.mean[static_cast<std::size_t>(i)], p.bounds.lo[i]), p.bounds.hi[i]);
            return out;
        }
        case PolicyKind::Linear:
        case PolicyKind::Mlp: {
            Vec pre, ls, hn;
            forward_net(p, s, h, pre, ls, hn);
            out.mean = squash(p, pre);
            out.log_std = std::move(ls);
            if (p.hidden_dim > 0) out.next.h = std::move(hn);
            return out;
        }
    }
    throw Error("unreachable");
}

SampleOut sample_action(const PolicyParams& p, const State& s, const HiddenState& h, Rng& rng) {
    if (!p.gaussian) throw ConfigError("policy has no sampler");
    check_inputs(p, s, h);
    Vec pre, ls, hn;
    forward_net(p, s, h, pre, ls, hn);
    SampleOut out;
    out.pre_squash.resize(pre.size());
    out.log_prob = 0.0;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        const double eps = rng.normal();
        out.pre_squash[i] = pre[i] + std::exp(ls[i]) * eps;
        out.log_prob += -ls[i] - kHalfLog2Pi - 0.5 * eps * eps;
    }
    out.action = squash(p, out.pre_squash);
    out.next = h;
    if (p.hidden_dim > 0) out.next.h = std::move(hn);
    return out;
}

SampleOut sample_action(const PolicyParams& p, const State& s, const HiddenState& h,
                        std::uint64_t seed) {
    Rng rng(seed);
    return sample_action(p, s, h, rng);
}

double log_prob_pre_squash(const PolicyParams& p, const State& s, const HiddenState& h,
                           const Vec& u) {
    if (!p.gaussian) throw ConfigError("policy has no sampler");
    check_inputs(p, s, h);
    if (static_cast<int>(u.size()) != p.action_dim)
        throw ConfigError("log_prob: action dimension mismatch");
    Vec pre, ls, hn;
    forward_net(p, s, h, pre, ls, hn);
    double lp = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double z = (u[i] - pre[i]) * std::exp(-ls[i]);
        lp += -ls[i] - kHalfLog2Pi - 0.5 * z * z;
    }
    return lp;
}

double entropy(const PolicyParams& p, const State& s, const HiddenState& h) {
    if (!p.gaussian) throw ConfigError("policy has no sampler");
    check_inputs(p, s, h);
    Vec pre, ls, hn;
    forward_net(p, s, h, pre, ls, hn);
    double e = 0.0;
    for (double v : ls) e += kHalfLog2PiE + v;
    return e;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace {

PolicyParams init_net(const SystemInfo& sys, PolicyKind kind, std::vector<int> hidden,
                      bool gaussian, std::uint64_t seed, double init_log_std, int hidden_dim) {
    PolicyParams p;
    p.kind = kind;
    p.gaussian = gaussian;
    p.state_dim = sys.state_dim;
    p.action_dim = sys.action_dim;
    p.hidden_dim = hidden_dim;
    p.hidden_layers = std::move(hidden);
    p.bounds = sys.bounds;
    p.flat.assign(p.param_count(), 0.0);
    Rng rng(seed);
    for (const auto& b : blocks_of(p)) {
        if (b.name == "log_std") {
            for (std::size_t i = 0; i < b.count(); ++i) p.flat[b.offset + i] = init_log_std;
        } else if (b.cols > 0) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(b.cols));
            for (std::size_t i = 0; i < b.count(); ++i)
                p.flat[b.offset + i] = rng.uniform(-1.0, 1.0) * scale;
        }
        // bias blocks stay zero
    }
    p.validate();
    return p;
}

}  // namespace

PolicyParams make_no_action(const SystemInfo& sys) {
    PolicyParams p;
    p.kind = PolicyKind::NoAction;
    p.state_dim = sys.state_dim;
    p.action_dim = sys.action_dim;
    p.bounds = sys.bounds;
    p.validate();
    return p;
}

PolicyParams make_constant(const SystemInfo& sys, Vec action) {
    PolicyParams p;
    p.kind = PolicyKind::Constant;
    p.state_dim = sys.state_dim;
    p.action_dim = sys.action_dim;
    p.bounds = sys.bounds;
    p.flat = std::move(action);
    p.validate();
    return p;
}

PolicyParams make_linear(const SystemInfo& sys, bool gaussian, std::uint64_t init_seed,
                         double init_log_std) {
    return init_net(sys, PolicyKind::Linear, {}, gaussian, init_seed, init_log_std, 0);
}

PolicyParams make_mlp(const SystemInfo& sys, std::vector<int> hidden, bool gaussian,
                      std::uint64_t init_seed, double init_log_std, int hidden_dim) {
    return init_net(sys, PolicyKind::Mlp, std::move(hidden), gaussian, init_seed, init_log_std,
                    hidden_dim);
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------

void save_weights(const PolicyParams& p, const std::string& path) {
    p.validate();
    std::ofstream out(path, std::ios::binary);  // binary: no newline translation
    if (!out) throw ConfigError("cannot write weights file '" + path + "'");
    out << "chaoscope-policy v1\n";
    out << "kind " << to_string(p.kind) << "\n";
    out << "gaussian " << (p.gaussian ? 1 : 0) << "\n";
    out << "state_dim " << p.state_dim << "\n";
    out << "action_dim " << p.action_dim << "\n";
    out << "hidden_dim " << p.hidden_dim << "\n";
    out << "hidden_layers";
    for (int w : p.hidden_layers) out << ' ' << w;
    out << "\n";
    out << "bounds_lo";
    for (double v : p.bounds.lo) out << ' ' << format_double(v);
    out << "\n";
    out << "bounds_hi";
    for (double v : p.bounds.hi) out << ' ' << format_double(v);
    out << "\n";
    out << "param_count " << p.flat.size() << "\n";
    for (const auto& b : blocks_of(p)) {
        out << "block " << b.name << ' ' << b.rows;
        if (b.cols > 0) out << ' ' << b.cols;
        out << "\n";
        const int cols = b.cols == 0 ? b.rows : b.cols;
        const int rows = b.cols == 0 ? 1 : b.rows;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                if (c) out << ' ';
                out << format_double(p.flat[b.offset + static_cast<std::size_t>(r) * cols + c]);
            }
            out << "\n";
        }
    }
    out << "end\n";
    if (!out) throw ConfigError("failed writing weights file '" + path + "'");
}

namespace {

struct LineReader {
    std::istream& in;
    std::string path;
    int lineno = 0;

    std::string next() {
        std::string line;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return line;
        }
        throw ConfigError(path + ":" + std::to_string(lineno) + ": unexpected end of file");
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": " + msg);
    }
};

std::vector<std::string> split(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> toks;
    std::string t;
    while (in >> t) toks.push_back(t);
    return toks;
}

double parse_value(LineReader& r, const std::string& tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') r.fail("bad number '" + tok + "'");
    return v;
}

}  // namespace

PolicyParams load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open weights file '" + path + "'");
    LineReader r{in, path};

    if (r.next() != "chaoscope-policy v1") r.fail("expected header 'chaoscope-policy v1'");
    PolicyParams p;
    auto field = [&](const std::string& name) {
        auto toks = split(r.next());
        if (toks.empty() || toks[0] != name) r.fail("expected field '" + name + "'");
        toks.erase(toks.begin());
        return toks;
    };

    p.kind = policy_kind_from_string(field("kind").at(0));
    p.gaussian = field("gaussian").at(0) == "1";
    p.state_dim = static_cast<int>(parse_value(r, field("state_dim").at(0)));
    p.action_dim = static_cast<int>(parse_value(r, field("action_dim").at(0)));
    p.hidden_dim = static_cast<int>(parse_value(r, field("hidden_dim").at(0)));
    for (const auto& t : field("hidden_layers"))
        p.hidden_layers.push_back(static_cast<int>(parse_value(r, t)));
    for (const auto& t : field("bounds_lo")) p.bounds.lo.push_back(parse_value(r, t));
    for (const auto& t : field("bounds_hi")) p.bounds.hi.push_back(parse_value(r, t));
    const auto declared = static_cast<std::size_t>(parse_value(r, field("param_count").at(0)));

    const std::size_t expected = p.param_count();
    if (declared != expected)
        r.fail("parameter count mismatch: expected " + std::to_string(expected) +
               " for these shapes, found " + std::to_string(declared));

    p.flat.assign(expected, 0.0);
    for (const auto& b : blocks_of(p)) {
        auto toks = split(r.next());
        if (toks.size() < 3 || toks[0] != "block" || toks[1] != b.name)
            r.fail("expected 'block " + b.name + "'");
        const int rows = static_cast<int>(parse_value(r, toks[2]));
        const int cols = toks.size() > 3 ? static_cast<int>(parse_value(r, toks[3])) : 0;
        if (rows != b.rows || cols != b.cols)
            r.fail("block " + b.name + ": expected shape " + std::to_string(b.rows) + "x" +
                   std::to_string(b.cols) + ", found " + std::to_string(rows) + "x" +
                   std::to_string(cols));
        const int ncols = b.cols == 0 ? b.rows : b.cols;
        const int nrows = b.cols == 0 ? 1 : b.rows;
        for (int row = 0; row < nrows; ++row) {
            auto vals = split(r.next());
            if (static_cast<int>(vals.size()) != ncols)
                r.fail("block " + b.name + ": expected " + std::to_string(ncols) +
                       " values, found " + std::to_string(vals.size()));
            for (int c = 0; c < ncols; ++c)
                p.flat[b.offset + static_cast<std::size_t>(row) * ncols + c] = parse_value(r, vals[static_cast<std::size_t>(c)]);
        }
    }
    if (r.next() != "end") r.fail("expected 'end'");
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Tape forwards
// ---------------------------------------------------------------------------

int squash_tape(ad::Tape& tape, const PolicyParams& p, int u) {
    Vec half(static_cast<std::size_t>(p.action_dim)), inv_half(static_cast<std::size_t>(p.action_dim)),
        center(static_cast<std::size_t>(p.action_dim));
    for (int i = 0; i < p.action_dim; ++i) {
        const double h = 0.5 * (p.bounds.hi[i] - p.bounds.lo[i]);
        if (h <= 0.0) throw ConfigError("squash_tape: degenerate action bounds");
        half[static_cast<std::size_t>(i)] = h;
        inv_half[static_cast<std::size_t>(i)] = 1.0 / h;
        center[static_cast<std::size_t>(i)] = 0.5 * (p.bounds.hi[i] + p.bounds.lo[i]);
    }
    const int t = tape.tanh_(tape.mul(u, tape.constant(inv_half)));
    return tape.add(tape.mul(t, tape.constant(half)), tape.constant(center));
}

PolicyTapeOut policy_tape_forward(ad::Tape& tape, const PolicyParams& p, int params_node,
                                  int s_node, int h_node) {
    PolicyTapeOut out;
    switch (p.kind) {
        case PolicyKind::NoAction:
            out.mean = tape.constant(Vec(static_cast<std::size_t>(p.action_dim), 0.0));
            out.pre_mean = out.mean;
            return out;
        case PolicyKind::Constant: {
            const int raw = tape.slice(params_node, 0, p.action_dim);
            bool uniform = true;
            for (int i = 1; i < p.action_dim; ++i)
                if (p.bounds.lo[i] != p.bounds.lo[0] || p.bounds.hi[i] != p.bounds.hi[0])
                    uniform = false;
            if (uniform) {
                out.mean = tape.clamp(raw, p.bounds.lo[0], p.bounds.hi[0]);
            } else {
                std::vector<int> dims;
                for (int i = 0; i < p.action_dim; ++i)
                    dims.push_back(tape.clamp(tape.pick(raw, i), p.bounds.lo[i], p.bounds.hi[i]));
                out.mean = tape.pack(dims);
            }
            out.pre_mean = out.mean;
            return out;
        }
        case PolicyKind::Linear:
        case PolicyKind::Mlp:
            break;
    }

    const auto blocks = blocks_of(p);
    auto slice_block = [&](const Block& b) {
        return tape.slice(params_node, static_cast<int>(b.offset), static_cast<int>(b.count()));
    };

    std::size_t first = 0;
    int x = s_node;
    if (p.hidden_dim > 0) {
        if (h_node < 0) throw ConfigError("policy_tape_forward: recurrent policy needs a hidden node");
        const int wh = slice_block(blocks[0]);
        const int ws = slice_block(blocks[1]);
        const int bh = slice_block(blocks[2]);
        int hn = tape.add(tape.matvec(wh, h_node, p.hidden_dim, p.hidden_dim),
                          tape.matvec(ws, s_node, p.hidden_dim, p.state_dim));
        hn = tape.tanh_(tape.add(hn, bh));
        out.hidden = hn;
        x = hn;
        first = 3;
    }

    const std::size_t n_stack = blocks.size() - first - (p.gaussian ? 1 : 0);
    for (std::size_t i = first; i < first + n_stack; i += 2) {
        const Block& w = blocks[i];
        const Block& b = blocks[i + 1];
        int y = tape.add(tape.matvec(slice_block(w), x, w.rows, w.cols), slice_block(b));
        const bool last = i + 2 >= first + n_stack;
        x = last ? y : tape.tanh_(y);
    }
    out.pre_mean = x;
    out.mean = squash_tape(tape, p, x);
    if (p.gaussian) out.log_std = tape.clamp(slice_block(blocks.back()), kLogStdMin, kLogStdMax);
    return out;
}

int log_prob_tape(ad::Tape& tape, const PolicyParams& p, int pre_mean, int log_std, const Vec& u) {
    // sum_i [ -log_std_i - 0.5 ln(2 pi) - 0.5 ((u_i - mean_i) / std_i)^2 ]
    const int u_node = tape.constant(u);
    const int inv_std = tape.exp_(tape.scale(log_std, -1.0));
    const int z = tape.mul(tape.sub(u_node, pre_mean), inv_std);
    const int quad = tape.scale(tape.sum(tape.square(z)), -0.5);
    const int ls_term = tape.scale(tape.sum(log_std), -1.0);
    return tape.add_const(tape.add(quad, ls_term),
                          -kHalfLog2Pi * static_cast<double>(p.action_dim));
}

int entropy_tape(ad::Tape& tape, const PolicyParams& p, int log_std) {
    return tape.add_const(tape.sum(log_std), kHalfLog2PiE * static_cast<double>(p.action_dim));
}

}  // namespace chaoscope
