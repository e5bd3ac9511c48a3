#include "kwsrl/policy.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "kwsrl/error.hpp"
#include "kwsrl/nn/ops.hpp"

namespace kwsrl::policy {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

void Architecture::validate() const
{
    const auto fail = [](const std::string& m) { throw ConfigError("architecture: " + m); };
    if (n_mfcc == 0 || n_frames == 0) fail("n_mfcc and n_frames must be positive");
    if (num_classes < 2) fail("need at least two classes");
    if (conv1_filters == 0 || conv2_filters == 0 || lstm_hidden == 0) fail("layer widths must be positive");
    if (kernel_size % 2 == 0) fail("kernel_size must be odd");
    if (pool_window == 0 || pool_window > n_mfcc) fail("pool_window must be in [1, n_mfcc]");
    for (std::size_t u : dense_units)
        if (u == 0) fail("dense layer widths must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0, 1)");
}

std::string Architecture::describe() const
{
    std::ostringstream out;
    out << "n_mfcc=" << n_mfcc << " n_frames=" << n_frames << " num_classes=" << num_classes
        << " conv1=" << conv1_filters << " conv2=" << conv2_filters << " kernel=" << kernel_size
        << " pool=" << pool_window << " lstm=" << lstm_hidden << " dense=";
    for (std::size_t i = 0; i < dense_units.size(); ++i) out << (i ? "," : "") << dense_units[i];
    char rate[32];
    std::snprintf(rate, sizeof rate, "%.17g", dropout_rate);
    out << " dropout=" << rate;
    return out.str();
}

Architecture Architecture::parse(const std::string& line)
{
    Architecture a;
    a.dense_units.clear();
    std::istringstream in(line);
    std::string item;
    const auto count = [](const std::string& v) {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw FormatError("bad count '" + v + "'");
        return static_cast<std::size_t>(n);
    };
    try {
        while (in >> item) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw FormatError("bad architecture item '" + item + "'");
            const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
            if (key == "n_mfcc") a.n_mfcc = count(value);
            else if (key == "n_frames") a.n_frames = count(value);
            else if (key == "num_classes") a.num_classes = count(value);
            else if (key == "conv1") a.conv1_filters = count(value);
            else if (key == "conv2") a.conv2_filters = count(value);
            else if (key == "kernel") a.kernel_size = count(value);
            else if (key == "pool") a.pool_window = count(value);
            else if (key == "lstm") a.lstm_hidden = count(value);
            else if (key == "dropout") a.dropout_rate = std::stod(value);
            else if (key == "dense") {
                std::istringstream parts(value);
                std::string p;
                while (std::getline(parts, p, ','))
                    if (!p.empty()) a.dense_units.push_back(count(p));
            } else throw FormatError("unknown architecture key '" + key + "'");
        }
    } catch (const std::logic_error&) {
        throw FormatError("malformed architecture line: " + line);
    }
    a.validate();
    return a;
}

std::vector<TensorSpec> layout(const Architecture& a)
{
    a.validate();
    const std::size_t gates = 4 * a.lstm_hidden;
    std::vector<TensorSpec> specs = {
        {"conv1.kernel", {a.kernel_size, 1, a.conv1_filters}},
        {"conv1.bias", {a.conv1_filters}},
        {"conv2.kernel", {a.kernel_size, a.conv1_filters, a.conv2_filters}},
        {"conv2.bias", {a.conv2_filters}},
        {"lstm.input_weights", {gates, a.frame_width()}},
        {"lstm.recurrent_weights", {gates, a.lstm_hidden}},
        {"lstm.bias", {gates}},
    };
    std::size_t prev = a.lstm_hidden;
    for (std::size_t i = 0; i < a.dense_units.size(); ++i) {
        const std::string base = "dense" + std::to_string(i + 1);
        specs.push_back({base + ".weight", {a.dense_units[i], prev}});
        specs.push_back({base + ".bias", {a.dense_units[i]}});
        prev = a.dense_units[i];
    }
    specs.push_back({"head.weight", {a.num_classes, prev}});
    specs.push_back({"head.bias", {a.num_classes}});
    return specs;
}

std::size_t parameter_count(const Architecture& arch)
{
    std::size_t total = 0;
    for (const auto& s : layout(arch)) total += nn::shape_size(s.shape);
    return total;
}

template <typename T>
Params<T> Params<T>::zeros(const Architecture& arch)
{
    Params<T> p{arch, {}};
    for (const auto& s : layout(arch)) p.tensors.emplace_back(s.shape);
    return p;
}

template <typename T>
std::size_t Params<T>::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

template <typename T>
Tensor<T>& Params<T>::operator[](const std::string& name)
{
    return const_cast<Tensor<T>&>(static_cast<const Params&>(*this)[name]);
}

template <typename T>
const Tensor<T>& Params<T>::operator[](const std::string& name) const
{
    const auto specs = layout(arch);
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return tensors.at(i);
    throw LogicError("no parameter tensor named '" + name + "'");
}

PolicyParams init_params(const Architecture& arch, std::uint64_t seed)
{
    PolicyParams p = PolicyParams::zeros(arch);
    Rng rng = Rng::derive(seed, 0x696e6974ULL);
    const auto specs = layout(arch);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const Shape& s = specs[i].shape;
        const std::string& name = specs[i].name;
        Tensor<float>& t = p.tensors[i];
        if (name == "lstm.bias") {
            for (std::size_t j = arch.lstm_hidden; j < 2 * arch.lstm_hidden; ++j) t[j] = 1.0f;
            continue;
        }
        if (s.size() == 1) continue;
        double fan_in, fan_out;
        if (s.size() == 3) {  // conv kernel [k, c_in, c_out]
            fan_in = static_cast<double>(s[0] * s[1]);
            fan_out = static_cast<double>(s[0] * s[2]);
        } else {  // [out, in]
            fan_in = static_cast<double>(s[1]);
            fan_out = static_cast<double>(s[0]);
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
    }
    return p;
}

template <typename T>
Tensor<T> state_batch(std::span<const dsp::FeatureMatrix* const> states)
{
    if (states.empty()) throw ShapeError("policy: empty state batch");
    const std::size_t n_mfcc = states[0]->n_mfcc, frames = states[0]->n_frames;
    Tensor<T> x({states.size(), frames, n_mfcc});
    T* out = x.data().data();
    for (const dsp::FeatureMatrix* fm : states) {
        if (fm->n_mfcc != n_mfcc || fm->n_frames != frames)
            throw ShapeError("policy: mixed feature shapes in one batch");
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t k = 0; k < n_mfcc; ++k) *out++ = static_cast<T>(fm->at(k, f));
    }
    return x;
}

template <typename T>
Tensor<T> state_tensor(const dsp::FeatureMatrix& features)
{
    const dsp::FeatureMatrix* one[] = {&features};
    return state_batch<T>(one);
}

template <typename T>
NetworkOutput<T> build_network(Graph<T>&, const Architecture& arch, std::span<const Var<T>> p, Var<T> states,
                               bool training, Rng* rng)
{
    const std::size_t expected_tensors = 9 + 2 * arch.dense_units.size();
    if (p.size() != expected_tensors)
        throw ShapeError("policy network expects " + std::to_string(expected_tensors) + " parameter tensors, got " +
                         std::to_string(p.size()));
    const Shape& in = states.shape();
    if (in.size() != 3 || in[1] != arch.n_frames || in[2] != arch.n_mfcc || in[0] == 0)
        throw ShapeError("policy states " + nn::shape_string(in) + " do not match network input [batch," +
                         std::to_string(arch.n_frames) + "," + std::to_string(arch.n_mfcc) + "]");
    const std::size_t batch = in[0];

    Var<T> x = nn::reshape(states, {batch * arch.n_frames, arch.n_mfcc, 1});
    x = nn::relu(nn::conv1d(x, p[0], p[1]));
    x = nn::relu(nn::conv1d(x, p[2], p[3]));
    x = nn::maxpool1d(x, arch.pool_window);
    x = nn::reshape(x, {batch, arch.n_frames, arch.frame_width()});
    Var<T> h = nn::lstm(x, p[4], p[5], p[6]);
    h = nn::dropout(h, arch.dropout_rate, training, rng);
    std::size_t next = 7;
    for (std::size_t i = 0; i < arch.dense_units.size(); ++i, next += 2) h = nn::relu(nn::dense(h, p[next], p[next + 1]));
    Var<T> logits = nn::dense(h, p[next], p[next + 1]);
    return {logits, nn::softmax(logits)};
}

template <typename T>
NetworkOutput<T> build_network(Graph<T>& g, const Params<T>& params, const Tensor<T>& states, bool training,
                               Rng* rng, Params<T>* grad_sinks)
{
    std::vector<Var<T>> vars;
    vars.reserve(params.tensors.size());
    for (std::size_t i = 0; i < params.tensors.size(); ++i)
        vars.push_back(g.param(params.tensors[i], grad_sinks ? &grad_sinks->tensors[i] : nullptr));
    return build_network<T>(g, params.arch, vars, g.constant(states), training, rng);
}

Tensor<float> forward_batch(const PolicyParams& params, std::span<const dsp::FeatureMatrix* const> states,
                            bool training, Rng* rng)
{
    Graph<float> g;
    return build_network<float>(g, params, state_batch<float>(states), training, rng).probs.value();
}

std::vector<float> forward(const PolicyParams& params, const dsp::FeatureMatrix& state, bool training, Rng* rng)
{
    const dsp::FeatureMatrix* one[] = {&state};
    return forward_batch(params, one, training, rng).storage();
}

std::size_t argmax(std::span<const float> probs)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

std::size_t act(const PolicyParams& params, const dsp::FeatureMatrix& state)
{
    return argmax(forward(params, state, false, nullptr));
}

template struct Params<float>;
template struct Params<double>;
template Tensor<float> state_batch<float>(std::span<const dsp::FeatureMatrix* const>);
template Tensor<double> state_batch<double>(std::span<const dsp::FeatureMatrix* const>);
template Tensor<float> state_tensor<float>(const dsp::FeatureMatrix&);
template Tensor<double> state_tensor<double>(const dsp::FeatureMatrix&);
template NetworkOutput<float> build_network<float>(Graph<float>&, const Architecture&, std::span<const Var<float>>,
                                                   Var<float>, bool, Rng*);
template NetworkOutput<double> build_network<double>(Graph<double>&, const Architecture&,
                                                     std::span<const Var<double>>, Var<double>, bool, Rng*);
template NetworkOutput<float> build_network<float>(Graph<float>&, const Params<float>&, const Tensor<float>&, bool,
                                                   Rng*, Params<float>*);
template NetworkOutput<double> build_network<double>(Graph<double>&, const Params<double>&, const Tensor<double>&,
                                                     bool, Rng*, Params<double>*);

}  // namespace kwsrl::policy
