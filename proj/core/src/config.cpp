#include "kfkl/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace kfkl {

std::vector<LossWeights> default_ablation_weights()
{
    const double third = 1.0 / 3.0;
    return {{third, third, third}, {0.5, 0.5, 0.0}, {0.5, 0.0, 0.5}, {0.0, 0.5, 0.5},
            {0.0, 0.0, 1.0},       {0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) parts.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

/// Accepts plain decimals and simple fractions such as 1/3.
double parse_double(const std::string& text)
{
    const std::string s = trim(text);
    const auto slash = s.find('/');
    if (slash != std::string::npos)
        return parse_double(s.substr(0, slash)) / parse_double(s.substr(slash + 1));
    if (s.empty()) throw ConfigError("expected a number, got an empty value");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE)
        throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

long long parse_integer(const std::string& text)
{
    const std::string s = trim(text);
    if (s.empty()) throw ConfigError("expected an integer, got an empty value");
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE)
        throw ConfigError("expected an integer, got '" + s + "'");
    return v;
}

bool parse_bool(const std::string& text)
{
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("expected a boolean, got '" + s + "'");
}

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    for (const auto& part : split(text, ',')) out.push_back(parse_double(part));
    if (out.empty()) throw ConfigError("expected at least one number");
    return out;
}

std::string format_list(const std::vector<double>& values)
{
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + format_real(values[i]);
    return s;
}

void require(bool ok, const std::string& message)
{
    if (!ok) throw ConfigError(message);
}

int positive_int(const std::string& v, const char* name)
{
    const long long n = parse_integer(v);
    require(n >= 1 && n <= 1'000'000'000, std::string(name) + " must be a positive integer");
    return static_cast<int>(n);
}

std::size_t count(const std::string& v, const char* name, long long min = 0)
{
    const long long n = parse_integer(v);
    require(n >= min, std::string(name) + " must be >= " + std::to_string(min));
    return static_cast<std::size_t>(n);
}

double positive_double(const std::string& v, const char* name)
{
    const double d = parse_double(v);
    require(d > 0.0, std::string(name) + " must be positive");
    return d;
}

std::vector<double> positive_list(const std::string& v, const char* name)
{
    auto list = parse_list(v);
    for (double d : list) require(d > 0.0, std::string(name) + " entries must be positive");
    return list;
}

std::string one_of(const std::string& v, std::initializer_list<const char*> options, const char* name)
{
    const std::string s = trim(v);
    for (const char* o : options)
        if (s == o) return s;
    std::string msg = std::string(name) + " must be one of:";
    for (const char* o : options) msg += std::string(" ") + o;
    throw ConfigError(msg + " (got '" + s + "')");
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields()
{
    using C = ExperimentConfig;
    static const std::vector<Field> table = {
        {"system",
         [](C& c, const std::string& v) {
             c.system = one_of(v, {"lorenz63", "vanderpol", "pendulum", "double_pendulum"}, "system");
         },
         [](const C& c) { return c.system; }},
        {"nu", [](C& c, const std::string& v) { c.nu = positive_double(v, "nu"); },
         [](const C& c) { return format_real(c.nu); }},
        {"substeps", [](C& c, const std::string& v) { c.substeps = positive_int(v, "substeps"); },
         [](const C& c) { return std::to_string(c.substeps); }},
        {"N", [](C& c, const std::string& v) { c.clients = positive_int(v, "N"); },
         [](const C& c) { return std::to_string(c.clients); }},
        {"p",
         [](C& c, const std::string& v) {
             c.success_prob = parse_double(v);
             require(c.success_prob >= 0.0 && c.success_prob <= 1.0, "p must lie in [0, 1]");
         },
         [](const C& c) { return format_real(c.success_prob); }},
        {"zeta", [](C& c, const std::string& v) { c.zeta = count(v, "zeta", 2); },
         [](const C& c) { return std::to_string(c.zeta); }},
        {"M", [](C& c, const std::string& v) { c.rounds = count(v, "M", 1); },
         [](const C& c) { return std::to_string(c.rounds); }},
        {"policy",
         [](C& c, const std::string& v) { c.policy = one_of(v, {"random", "roundrobin", "threshold"}, "policy"); },
         [](const C& c) { return c.policy; }},
        {"rho",
         [](C& c, const std::string& v) {
             c.rho = parse_double(v);
             require(c.rho >= 1.0, "rho must be >= 1");
         },
         [](const C& c) { return format_real(c.rho); }},
        {"scheme",
         [](C& c, const std::string& v) { c.scheme = one_of(v, {"single", "perfect", "central", "fedkl"}, "scheme"); },
         [](const C& c) { return c.scheme; }},
        {"sigma_f", [](C& c, const std::string& v) { c.sigma_f = positive_list(v, "sigma_f"); },
         [](const C& c) { return format_list(c.sigma_f); }},
        {"sigma_h", [](C& c, const std::string& v) { c.sigma_h = positive_list(v, "sigma_h"); },
         [](const C& c) { return format_list(c.sigma_h); }},
        {"x0_hat", [](C& c, const std::string& v) { c.x0_hat = parse_list(v); },
         [](const C& c) { return format_list(c.x0_hat); }},
        {"P0_hat", [](C& c, const std::string& v) { c.p0_hat = positive_list(v, "P0_hat"); },
         [](const C& c) { return format_list(c.p0_hat); }},
        {"alpha", [](C& c, const std::string& v) { c.alpha = positive_double(v, "alpha"); },
         [](const C& c) { return format_real(c.alpha); }},
        {"kappa", [](C& c, const std::string& v) { c.kappa = parse_double(v); },
         [](const C& c) { return format_real(c.kappa); }},
        {"beta", [](C& c, const std::string& v) { c.beta = parse_double(v); },
         [](const C& c) { return format_real(c.beta); }},
        {"estimator",
         [](C& c, const std::string& v) { c.estimator = one_of(v, {"ukf", "ukf-resample", "ekf"}, "estimator"); },
         [](const C& c) { return c.estimator; }},
        {"smooth", [](C& c, const std::string& v) { c.smooth = parse_bool(v); },
         [](const C& c) { return std::string(c.smooth ? "true" : "false"); }},
        {"observer",
         [](C& c, const std::string& v) { c.observer = one_of(v, {"projection", "identity", "affine"}, "observer"); },
         [](const C& c) { return c.observer; }},
        {"xi_max",
         [](C& c, const std::string& v) {
             c.xi_max = parse_double(v);
             require(c.xi_max >= 0.0, "xi_max must be >= 0");
         },
         [](const C& c) { return format_real(c.xi_max); }},
        {"mu", [](C& c, const std::string& v) { c.window = positive_int(v, "mu"); },
         [](const C& c) { return std::to_string(c.window); }},
        {"tau", [](C& c, const std::string& v) { c.depth = positive_int(v, "tau"); },
         [](const C& c) { return std::to_string(c.depth); }},
        {"latent_dim",
         [](C& c, const std::string& v) { c.latent_dim = static_cast<int>(count(v, "latent_dim", 0)); },
         [](const C& c) { return std::to_string(c.latent_dim); }},
        {"hidden_layers",
         [](C& c, const std::string& v) { c.hidden_layers = static_cast<int>(count(v, "hidden_layers", 0)); },
         [](const C& c) { return std::to_string(c.hidden_layers); }},
        {"hidden_width", [](C& c, const std::string& v) { c.hidden_width = positive_int(v, "hidden_width"); },
         [](const C& c) { return std::to_string(c.hidden_width); }},
        {"E",
         [](C& c, const std::string& v) { c.epochs = static_cast<int>(count(v, "E", 0)); },
         [](const C& c) { return std::to_string(c.epochs); }},
        {"B", [](C& c, const std::string& v) { c.batch_size = positive_int(v, "B"); },
         [](const C& c) { return std::to_string(c.batch_size); }},
        {"eta", [](C& c, const std::string& v) { c.lr = positive_double(v, "eta"); },
         [](const C& c) { return format_real(c.lr); }},
        {"decay",
         [](C& c, const std::string& v) {
             c.weight_decay = parse_double(v);
             require(c.weight_decay >= 0.0, "decay must be >= 0");
         },
         [](const C& c) { return format_real(c.weight_decay); }},
        {"gamma",
         [](C& c, const std::string& v) {
             c.gamma = parse_double(v);
             require(c.gamma > 0.0 && c.gamma <= 1.0, "gamma must lie in (0, 1]");
         },
         [](const C& c) { return format_real(c.gamma); }},
        {"w1",
         [](C& c, const std::string& v) {
             c.weights.linear = parse_double(v);
             require(c.weights.linear >= 0.0, "w1 must be >= 0");
         },
         [](const C& c) { return format_real(c.weights.linear); }},
        {"w2",
         [](C& c, const std::string& v) {
             c.weights.reconstruction = parse_double(v);
             require(c.weights.reconstruction >= 0.0, "w2 must be >= 0");
         },
         [](const C& c) { return format_real(c.weights.reconstruction); }},
        {"w3",
         [](C& c, const std::string& v) {
             c.weights.prediction = parse_double(v);
             require(c.weights.prediction >= 0.0, "w3 must be >= 0");
         },
         [](const C& c) { return format_real(c.weights.prediction); }},
        {"reset_moments", [](C& c, const std::string& v) { c.reset_moments = parse_bool(v); },
         [](const C& c) { return std::string(c.reset_moments ? "true" : "false"); }},
        {"persist_lr", [](C& c, const std::string& v) { c.persist_lr = parse_bool(v); },
         [](const C& c) { return std::string(c.persist_lr ? "true" : "false"); }},
        {"l1", [](C& c, const std::string& v) { c.l1 = positive_int(v, "l1"); },
         [](const C& c) { return std::to_string(c.l1); }},
        {"l2", [](C& c, const std::string& v) { c.l2 = positive_int(v, "l2"); },
         [](const C& c) { return std::to_string(c.l2); }},
        {"final_window", [](C& c, const std::string& v) { c.final_window = count(v, "final_window", 1); },
         [](const C& c) { return std::to_string(c.final_window); }},
        {"bench_trajectories",
         [](C& c, const std::string& v) { c.bench_trajectories = positive_int(v, "bench_trajectories"); },
         [](const C& c) { return std::to_string(c.bench_trajectories); }},
        {"bench_final_steps",
         [](C& c, const std::string& v) { c.bench_final_steps = count(v, "bench_final_steps", 1); },
         [](const C& c) { return std::to_string(c.bench_final_steps); }},
        {"ablation_seeds",
         [](C& c, const std::string& v) { c.ablation_seeds = positive_int(v, "ablation_seeds"); },
         [](const C& c) { return std::to_string(c.ablation_seeds); }},
        {"ablation_weights",
         [](C& c, const std::string& v) {
             std::vector<LossWeights> rows;
             for (const auto& row : split(v, ';')) {
                 if (row.empty()) continue;
                 const auto w = parse_list(row);
                 require(w.size() == 3, "each ablation_weights row needs three weights");
                 for (double x : w) require(x >= 0.0, "ablation weights must be >= 0");
                 rows.push_back({w[0], w[1], w[2]});
             }
             require(!rows.empty(), "ablation_weights needs at least one row");
             c.ablation_weights = rows;
         },
         [](const C& c) {
             std::string s;
             for (std::size_t i = 0; i < c.ablation_weights.size(); ++i) {
                 const auto& w = c.ablation_weights[i];
                 s += (i ? "; " : "") + format_list({w.linear, w.reconstruction, w.prediction});
             }
             return s;
         }},
        {"pendulum_files",
         [](C& c, const std::string& v) {
             c.pendulum_files.clear();
             for (const auto& f : split(v, ','))
                 if (!f.empty()) c.pendulum_files.push_back(f);
         },
         [](const C& c) {
             std::string s;
             for (std::size_t i = 0; i < c.pendulum_files.size(); ++i) s += (i ? "," : "") + c.pendulum_files[i];
             return s;
         }},
        {"pendulum_begin", [](C& c, const std::string& v) { c.pendulum_begin = count(v, "pendulum_begin"); },
         [](const C& c) { return std::to_string(c.pendulum_begin); }},
        {"pendulum_end", [](C& c, const std::string& v) { c.pendulum_end = count(v, "pendulum_end", 1); },
         [](const C& c) { return std::to_string(c.pendulum_end); }},
        {"velocity_window",
         [](C& c, const std::string& v) { c.velocity_window = count(v, "velocity_window", 1); },
         [](const C& c) { return std::to_string(c.velocity_window); }},
        {"sample_period", [](C& c, const std::string& v) { c.sample_period = positive_double(v, "sample_period"); },
         [](const C& c) { return format_real(c.sample_period); }},
        {"negate_velocity", [](C& c, const std::string& v) { c.negate_velocity = parse_bool(v); },
         [](const C& c) { return std::string(c.negate_velocity ? "true" : "false"); }},
        {"test_begin", [](C& c, const std::string& v) { c.test_begin = count(v, "test_begin"); },
         [](const C& c) { return std::to_string(c.test_begin); }},
        {"test_end", [](C& c, const std::string& v) { c.test_end = count(v, "test_end", 1); },
         [](const C& c) { return std::to_string(c.test_end); }},
        {"seed",
         [](C& c, const std::string& v) {
             const std::string s = trim(v);
             errno = 0;
             char* end = nullptr;
             const unsigned long long n = std::strtoull(s.c_str(), &end, 10);
             require(!s.empty() && s[0] != '-' && end == s.c_str() + s.size() && errno != ERANGE,
                     "seed must be an unsigned 64-bit integer");
             c.seed = n;
         },
         [](const C& c) { return std::to_string(c.seed); }},
        {"out",
         [](C& c, const std::string& v) {
             require(!trim(v).empty(), "out must not be empty");
             c.out = trim(v);
         },
         [](const C& c) { return c.out; }},
    };
    return table;
}

}  // namespace

std::string format_real(double value)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value)
{
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& source)
{
    ExperimentConfig config;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        try {
            set_config_value(config, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return config;
}

ExperimentConfig parse_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string serialize_config(const ExperimentConfig& config)
{
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

Matrix diagonal_from(const std::vector<double>& values, int dim, const std::string& name)
{
    return vector_from(values, dim, name).asDiagonal();
}

Vector vector_from(const std::vector<double>& values, int dim, const std::string& name)
{
    if (values.size() == 1) return Vector::Constant(dim, values.front());
    if (static_cast<int>(values.size()) != dim)
        throw ConfigError(name + " has " + std::to_string(values.size()) + " entries, expected 1 or "
                          + std::to_string(dim));
    return Eigen::Map<const Vector>(values.data(), dim);
}

void ExperimentConfig::validate() const
{
    const SystemModel sys = make_system();
    const int d = sys.dim;
    vector_from(sigma_f, d, "sigma_f");
    vector_from(x0_hat, d, "x0_hat");
    vector_from(p0_hat, d, "P0_hat");
    if (observer == "projection") {
        require(d == 3, "projection observer needs a 3-dimensional system");
        vector_from(sigma_h, 2, "sigma_h");
    } else {
        vector_from(sigma_h, d, "sigma_h");
    }
    require(alpha * alpha * (d + kappa) > 0.0, "alpha^2 (d_x + kappa) must be positive");
    require(static_cast<std::size_t>(l1) < zeta + 1 && static_cast<std::size_t>(l2) < zeta + 1,
            "l1 and l2 must be smaller than the test trajectory length");
    require(pendulum_begin < pendulum_end, "pendulum_begin must precede pendulum_end");
    require(test_begin < test_end, "test_begin must precede test_end");
}

SystemModel ExperimentConfig::make_system() const
{
    SystemModel sys = kfkl::make_system(system);
    sys.nu = nu;
    sys.substeps = substeps;
    return sys;
}

DknConfig ExperimentConfig::dkn_config(int state_dim) const
{
    DknConfig c;
    c.state_dim = state_dim;
    c.window = window;
    c.depth = depth;
    c.latent_dim = latent_dim > 0 ? latent_dim : 4 * state_dim * window;
    c.hidden_layers = hidden_layers;
    c.hidden_width = hidden_width;
    c.weights = weights;
    return c;
}

EstimationSettings ExperimentConfig::estimation_settings(int state_dim) const
{
    EstimationSettings s;
    s.kind = estimator_from_string(estimator);
    s.ut = ut_params();
    s.prior.mean = vector_from(x0_hat, state_dim, "x0_hat");
    s.prior.cov = diagonal_from(p0_hat, state_dim, "P0_hat");
    s.smooth = smooth;
    s.source = scheme == "perfect" ? DataSource::Perfect : DataSource::Estimated;
    return s;
}

FederationSettings ExperimentConfig::federation_settings() const
{
    FederationSettings s;
    s.policy = make_policy();
    s.zeta = zeta;
    s.train.epochs = epochs;
    s.train.batch_size = batch_size;
    s.train.depth = depth;
    s.train.weights = weights;
    s.window = window;
    s.reset_moments = reset_moments;
    s.persist_lr = persist_lr;
    s.initial_lr = lr;
    return s;
}

AdamState ExperimentConfig::initial_optimizer() const
{
    AdamState a;
    a.lr = lr;
    a.gamma = gamma;
    a.decay = weight_decay;
    return a;
}

Policy ExperimentConfig::make_policy() const
{
    Policy p;
    p.kind = policy_from_string(policy);
    p.rho = rho;
    return p;
}

}  // namespace kfkl
