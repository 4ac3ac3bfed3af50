// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ccmlab/errors.hpp"
#include "ccmlab/random.hpp"
#include "ccmlab/textio.hpp"

namespace ccm::nn {

const char* to_string(Activation a) {
    switch (a) {
    case Activation::relu:
        return "relu";
    case Activation::sigmoid:
        return "sigmoid";
    case Activation::linear:
        return "linear";
    }
    return "?";
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") {
        return Activation::relu;
    }
    if (s == "sigmoid") {
        return Activation::sigmoid;
    }
    if (s == "linear") {
        return Activation::linear;
    }
    throw ConfigError("unknown activation '" + s + "'");
}

// ---- model structure ----------------------------------------------------------

std::vector<Dense*> MlpModel::layers() {
    std::vector<Dense*> out;
    for (auto& b : branches) {
        for (auto& l : b.layers) {
            out.push_back(&l);
        }
    }
    for (auto& l : gate) {
        out.push_back(&l);
    }
    for (auto& l : trunk) {
        out.push_back(&l);
    }
    return out;
}

std::vector<const Dense*> MlpModel::layers() const {
    std::vector<const Dense*> out;
    for (auto* l : const_cast<MlpModel*>(this)->layers()) {
        out.push_back(l);
    }
    return out;
}

std::size_t MlpModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* l : layers()) {
        n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
    }
    return n;
}

namespace {

void check_chain(const std::vector<Dense>& layers, Eigen::Index in, const std::string& where) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].in() != in || layers[i].bias.size() != layers[i].out()) {
            throw ConfigError(where + " layer " + std::to_string(i) + " does not chain (expected input width " +
                              std::to_string(in) + ")");
        }
        in = layers[i].out();
    }
}

Eigen::Index concat_width(const MlpModel& m) {
    Eigen::Index w = 0;
    for (const auto& b : m.branches) {
        w += b.out();
    }
    return w;
}

} // namespace

void MlpModel::validate() const {
    const Eigen::Index in = input_width();
    if (in == 0 || input_scale.size() != in || output_scale.size() != output_width()) {
        throw ConfigError("model normalization vectors are inconsistent");
    }
    Eigen::Index trunk_in = in;
    if (!branches.empty()) {
        for (std::size_t b = 0; b < branches.size(); ++b) {
            const auto& br = branches[b];
            if (br.offset < 0 || br.width < 1 || br.offset + br.width > in) {
                throw ConfigError("branch " + std::to_string(b) + " slice exceeds the input width");
            }
            check_chain(br.layers, br.width, "branch " + std::to_string(b));
        }
        trunk_in = concat_width(*this);
        if (!gate.empty()) {
            check_chain(gate, trunk_in, "gate");
            if (gate.back().out() != trunk_in) {
                throw ConfigError("attention gate output width must equal the concatenation width");
            }
        }
    } else if (!gate.empty()) {
        throw ConfigError("an attention gate requires input branches");
    }
    if (trunk.empty()) {
        throw ConfigError("model needs at least one trunk layer");
    }
    check_chain(trunk, trunk_in, "trunk");
    if (trunk.back().out() != output_width()) {
        throw ConfigError("final layer width does not match the output normalization");
    }
}

bool MlpModel::operator==(const MlpModel& o) const {
    auto same_layers = [](const std::vector<Dense>& a, const std::vector<Dense>& b) {
        if (a.size() != b.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].activation != b[i].activation || a[i].weight.rows() != b[i].weight.rows() ||
                a[i].weight.cols() != b[i].weight.cols() || a[i].weight != b[i].weight || a[i].bias != b[i].bias) {
                return false;
            }
        }
        return true;
    };
    if (branches.size() != o.branches.size()) {
        return false;
    }
    for (std::size_t b = 0; b < branches.size(); ++b) {
        if (branches[b].offset != o.branches[b].offset || branches[b].width != o.branches[b].width ||
            !same_layers(branches[b].layers, o.branches[b].layers)) {
            return false;
        }
    }
    return same_layers(gate, o.gate) && same_layers(trunk, o.trunk) && input_shift == o.input_shift &&
           input_scale == o.input_scale && output_shift == o.output_shift && output_scale == o.output_scale;
}

// ---- architecture -------------------------------------------------------------

namespace {

std::string describe_layers(const std::vector<LayerSpec>& layers) {
    std::string s;
    for (const auto& l : layers) {
        s += ' ' + std::to_string(l.width) + ' ' + to_string(l.activation);
    }
    return s;
}

std::vector<LayerSpec> parse_layers(const std::vector<std::string_view>& tok, std::size_t from) {
    if ((tok.size() - from) % 2 != 0) {
        throw ConfigError("architecture layer list must be width/activation pairs");
    }
    std::vector<LayerSpec> out;
    for (std::size_t i = from; i < tok.size(); i += 2) {
        out.push_back({static_cast<int>(parse_int(tok[i])), parse_activation(std::string(tok[i + 1]))});
    }
    return out;
}

} // namespace

std::string Architecture::describe() const {
    std::string s = "arch in " + std::to_string(inputs);
    for (const auto& b : branches) {
        s += " | branch " + std::to_string(b.offset) + ' ' + std::to_string(b.width) + " :" + describe_layers(b.layers);
    }
    if (!gate.empty()) {
        s += " | gate :" + describe_layers(gate);
    }
    s += " | trunk :" + describe_layers(trunk);
    return s;
}

Architecture Architecture::parse(const std::string& line) {
    Architecture arch;
    const auto parts = split(line, '|');
    bool have_in = false;
    bool have_trunk = false;
    for (auto part : parts) {
        const auto tok = split_ws(part);
        if (tok.empty()) {
            throw ConfigError("empty architecture section");
        }
        if (tok[0] == "arch") {
            if (tok.size() != 3 || tok[1] != "in") {
                throw ConfigError("architecture line must start with 'arch in <width>'");
            }
            arch.inputs = static_cast<int>(parse_int(tok[2]));
            have_in = true;
        } else if (tok[0] == "branch") {
            if (tok.size() < 4 || tok[3] != ":") {
                throw ConfigError("malformed branch section");
            }
            arch.branches.push_back(
                {static_cast<int>(parse_int(tok[1])), static_cast<int>(parse_int(tok[2])), parse_layers(tok, 4)});
        } else if (tok[0] == "gate" && tok.size() >= 2 && tok[1] == ":") {
            arch.gate = parse_layers(tok, 2);
        } else if (tok[0] == "trunk" && tok.size() >= 2 && tok[1] == ":") {
            arch.trunk = parse_layers(tok, 2);
            have_trunk = true;
        } else {
            throw ConfigError("unknown architecture section '" + std::string(tok[0]) + "'");
        }
    }
    if (!have_in || !have_trunk) {
        throw ConfigError("architecture needs 'arch in' and 'trunk' sections");
    }
    return arch;
}

Architecture architecture_of(const MlpModel& model) {
    auto specs = [](const std::vector<Dense>& layers) {
        std::vector<LayerSpec> out;
        for (const auto& l : layers) {
            out.push_back({static_cast<int>(l.out()), l.activation});
        }
        return out;
    };
    Architecture a;
    a.inputs = static_cast<int>(model.input_width());
    for (const auto& b : model.branches) {
        a.branches.push_back({static_cast<int>(b.offset), static_cast<int>(b.width), specs(b.layers)});
    }
    a.gate = specs(model.gate);
    a.trunk = specs(model.trunk);
    return a;
}

MlpModel build(const Architecture& arch, std::uint64_t seed) {
    MlpModel m;
    std::uint64_t layer_index = 0;
    auto make = [&](const std::vector<LayerSpec>& specs, Eigen::Index in) {
        std::vector<Dense> layers;
        for (const auto& s : specs) {
            if (s.width < 1) {
                throw ConfigError("layer width must be positive");
            }
            Rng rng = Rng::substream(seed, "init", layer_index++);
            const double fan_in = static_cast<double>(in);
            const double limit = std::sqrt((s.activation == Activation::relu ? 6.0 : 3.0) / fan_in);
            Dense d;
            d.activation = s.activation;
            d.weight.resize(s.width, in);
            for (Eigen::Index j = 0; j < in; ++j) {
                for (Eigen::Index i = 0; i < s.width; ++i) {
                    d.weight(i, j) = rng.uniform(-limit, limit);
                }
            }
            d.bias = Eigen::VectorXd::Zero(s.width);
            layers.push_back(std::move(d));
            in = s.width;
        }
        return layers;
    };

    if (arch.inputs < 1) {
        throw ConfigError("architecture needs a positive input width");
    }
    Eigen::Index trunk_in = arch.inputs;
    if (!arch.branches.empty()) {
        trunk_in = 0;
        for (const auto& b : arch.branches) {
            Branch br;
            br.offset = b.offset;
            br.width = b.width;
            br.layers = make(b.layers, b.width);
            trunk_in += br.out();
            m.branches.push_back(std::move(br));
        }
        m.gate = make(arch.gate, trunk_in);
    } else if (!arch.gate.empty()) {
        throw ConfigError("an attention gate requires input branches");
    }
    m.trunk = make(arch.trunk, trunk_in);
    const Eigen::Index out = arch.trunk.empty() ? 0 : arch.trunk.back().width;
    m.input_shift = Eigen::VectorXd::Zero(arch.inputs);
    m.input_scale = Eigen::VectorXd::Ones(arch.inputs);
    m.output_shift = Eigen::VectorXd::Zero(out);
    m.output_scale = Eigen::VectorXd::Ones(out);
    m.validate();
    return m;
}

Architecture lcnet_architecture(int n_antennas) {
    using A = Activation;
    Architecture a;
    a.inputs = 3;
    a.branches.push_back({0, 2, {{50, A::relu}, {100, A::relu}}});
    a.branches.push_back({2, 1, {{20, A::relu}, {50, A::relu}}});
    a.gate = {{150, A::relu}, {150, A::relu}, {150, A::sigmoid}};
    a.trunk = {{200, A::relu}, {200, A::relu}, {150, A::relu}, {150, A::relu}, {n_antennas * n_antennas, A::linear}};
    return a;
}

Architecture lenet_architecture(int n_antennas) {
    using A = Activation;
    Architecture a;
    a.inputs = 2 * n_antennas;
    a.trunk = {{50, A::relu}, {100, A::relu}, {200, A::relu}, {100, A::relu}, {50, A::relu}, {2, A::linear}};
    return a;
}

Dataset Dataset::from_samples(const std::vector<Sample>& samples) {
    Dataset d;
    if (samples.empty()) {
        return d;
    }
    const auto in = samples.front().features.size();
    const auto out = samples.front().label.size();
    d.features.resize(in, static_cast<Eigen::Index>(samples.size()));
    d.labels.resize(out, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].features.size() != in || samples[i].label.size() != out) {
            throw ConfigError("samples have inconsistent widths");
        }
        d.features.col(static_cast<Eigen::Index>(i)) = samples[i].features;
        d.labels.col(static_cast<Eigen::Index>(i)) = samples[i].label;
    }
    return d;
}

// ---- forward / backward -------------------------------------------------------

namespace {

void activate(Eigen::MatrixXd& z, Activation a) {
    switch (a) {
    case Activation::relu:
        z = z.cwiseMax(0.0);
        break;
    case Activation::sigmoid:
        z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        break;
    case Activation::linear:
        break;
    }
}

Eigen::MatrixXd apply(const Dense& d, const Eigen::MatrixXd& a) {
    Eigen::MatrixXd z = d.weight * a;
    z.colwise() += d.bias;
    activate(z, d.activation);
    return z;
}

// dL/dz from dL/da and the activation output a
Eigen::MatrixXd through_activation(const Eigen::MatrixXd& grad, const Eigen::MatrixXd& a, Activation act) {
    switch (act) {
    case Activation::relu:
        return grad.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    case Activation::sigmoid:
        return grad.cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
    case Activation::linear:
        return grad;
    }
    return grad;
}

struct Tape {
    Eigen::MatrixXd input;
    std::vector<std::vector<Eigen::MatrixXd>> branch; // [b][0] = slice, [b][l + 1] = layer l output
    Eigen::MatrixXd concat;
    std::vector<Eigen::MatrixXd> gate; // [0] = concat, [l + 1] = gate layer l output
    std::vector<Eigen::MatrixXd> trunk; // [0] = trunk input, [l + 1] = trunk layer l output

    const Eigen::MatrixXd& net() const { return trunk.back(); }
};

Eigen::MatrixXd normalize_input(const MlpModel& m, const Eigen::MatrixXd& x) {
    if (x.rows() != m.input_width()) {
        throw ConfigError("feature width " + std::to_string(x.rows()) + " does not match model input width " +
                          std::to_string(m.input_width()));
    }
    return (x.colwise() - m.input_shift).array().colwise() / m.input_scale.array();
}

Eigen::MatrixXd denormalize_output(const MlpModel& m, const Eigen::MatrixXd& net) {
    return (net.array().colwise() * m.output_scale.array()).matrix().colwise() + m.output_shift;
}

Tape record(const MlpModel& m, const Eigen::MatrixXd& x) {
    Tape t;
    t.input = normalize_input(m, x);
    Eigen::MatrixXd trunk_in;
    if (m.branches.empty()) {
        trunk_in = t.input;
    } else {
        Eigen::Index rows = 0;
        for (const auto& b : m.branches) {
            std::vector<Eigen::MatrixXd> acts;
            acts.push_back(t.input.middleRows(b.offset, b.width));
            for (const auto& l : b.layers) {
                acts.push_back(apply(l, acts.back()));
            }
            rows += acts.back().rows();
            t.branch.push_back(std::move(acts));
        }
        t.concat.resize(rows, x.cols());
        Eigen::Index r = 0;
        for (const auto& acts : t.branch) {
            t.concat.middleRows(r, acts.back().rows()) = acts.back();
            r += acts.back().rows();
        }
        if (m.gate.empty()) {
            trunk_in = t.concat;
        } else {
            t.gate.push_back(t.concat);
            for (const auto& l : m.gate) {
                t.gate.push_back(apply(l, t.gate.back()));
            }
            trunk_in = t.concat.cwiseProduct(t.gate.back());
        }
    }
    t.trunk.push_back(std::move(trunk_in));
    for (const auto& l : m.trunk) {
        t.trunk.push_back(apply(l, t.trunk.back()));
    }
    return t;
}

// Backprop through a layer stack; returns dL/d(stack input). Gradients are
// written to grads at positions [first, first + layers.size()).
Eigen::MatrixXd backprop(const std::vector<Dense>& layers, const std::vector<Eigen::MatrixXd>& acts,
                         Eigen::MatrixXd grad, Gradients& grads, std::size_t first, bool need_input_grad) {
    for (std::size_t l = layers.size(); l-- > 0;) {
        const Eigen::MatrixXd dz = through_activation(grad, acts[l + 1], layers[l].activation);
        grads.weight[first + l].noalias() = dz * acts[l].transpose();
        grads.bias[first + l] = dz.rowwise().sum();
        if (l > 0 || need_input_grad) {
            grad.noalias() = layers[l].weight.transpose() * dz;
        }
    }
    return grad;
}

void shape_like(const MlpModel& m, Gradients& g) {
    const auto layers = m.layers();
    g.weight.resize(layers.size());
    g.bias.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        g.weight[i].setZero(layers[i]->weight.rows(), layers[i]->weight.cols());
        g.bias[i].setZero(layers[i]->bias.size());
    }
}

} // namespace

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& features) {
    return denormalize_output(model, record(model, features).net());
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& features) {
    return forward_batch(model, features);
}

void fit_normalization(MlpModel& model, const Dataset& data) {
    if (data.size() == 0) {
        throw ConfigError("cannot fit normalization on an empty dataset");
    }
    auto stats = [](const Eigen::MatrixXd& x, Eigen::VectorXd& shift, Eigen::VectorXd& scale) {
        const double n = static_cast<double>(x.cols());
        shift = x.rowwise().mean();
        scale = ((x.colwise() - shift).array().square().rowwise().sum() / n).sqrt().matrix();
        for (auto& s : scale) {
            if (!(s > 1e-12)) {
                s = 1.0;
            }
        }
    };
    if (data.features.rows() != model.input_width() || data.labels.rows() != model.output_width()) {
        throw ConfigError("dataset widths do not match the model");
    }
    stats(data.features, model.input_shift, model.input_scale);
    stats(data.labels, model.output_shift, model.output_scale);
}

double mse_loss(const MlpModel& model, const Dataset& data) {
    const Eigen::MatrixXd pred = forward_batch(model, data.features);
    return (pred - data.labels).squaredNorm() / static_cast<double>(pred.size());
}

double loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
                         Gradients& grads) {
    if (labels.rows() != m.output_width() || labels.cols() != features.cols()) {
        throw ConfigError("label matrix does not match the model output width / batch size");
    }
    const Tape t = record(m, features);
    const Eigen::MatrixXd err = denormalize_output(m, t.net()) - labels;
    const double count = static_cast<double>(err.size());
    const double loss = err.squaredNorm() / count;

    if (grads.weight.size() != m.layers().size()) {
        shape_like(m, grads);
    }
    std::size_t n_branch_layers = 0;
    for (const auto& b : m.branches) {
        n_branch_layers += b.layers.size();
    }
    const std::size_t gate_first = n_branch_layers;
    const std::size_t trunk_first = gate_first + m.gate.size();

    Eigen::MatrixXd grad = (2.0 / count) * (err.array().colwise() * m.output_scale.array()).matrix();
    grad = backprop(m.trunk, t.trunk, std::move(grad), grads, trunk_first, !m.branches.empty());
    if (m.branches.empty()) {
        return loss;
    }

    Eigen::MatrixXd d_concat;
    if (m.gate.empty()) {
        d_concat = std::move(grad);
    } else {
        const Eigen::MatrixXd& weights = t.gate.back();
        d_concat = grad.cwiseProduct(weights);
        Eigen::MatrixXd d_weights = grad.cwiseProduct(t.concat);
        d_concat += backprop(m.gate, t.gate, std::move(d_weights), grads, gate_first, true);
    }

    std::size_t first = 0;
    Eigen::Index row = 0;
    for (std::size_t b = 0; b < m.branches.size(); ++b) {
        const auto& br = m.branches[b];
        const Eigen::Index rows = br.out();
        backprop(br.layers, t.branch[b], d_concat.middleRows(row, rows), grads, first, false);
        first += br.layers.size();
        row += rows;
    }
    return loss;
}

// ---- training -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be nonnegative and finite");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("Adam decay rates must lie in (0, 1)");
    }
    if (batch_size < 1 || epochs < 0 || plateau_patience < 1) {
        throw ConfigError("batch size and patience must be positive, epochs nonnegative");
    }
}

namespace {

std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng = Rng::substream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

} // namespace

TrainResult train(MlpModel& model, const Dataset& data, const TrainConfig& cfg) {
    TrainState state;
    return train(model, data, cfg, state);
}

TrainResult train(MlpModel& model, const Dataset& data, const TrainConfig& cfg, TrainState& state) {
    cfg.validate();
    model.validate();
    const Eigen::Index n = data.size();
    if (n == 0) {
        throw ConfigError("training needs at least one sample");
    }
    if (data.features.rows() != model.input_width() || data.labels.rows() != model.output_width()) {
        throw ConfigError("dataset widths do not match the model");
    }
    if (!state.initialized()) {
        shape_like(model, state.first_moment);
        shape_like(model, state.second_moment);
        state.learning_rate = cfg.learning_rate;
    }

    const auto layers = model.layers();
    Gradients grads;
    shape_like(model, grads);
    const Eigen::Index bs = cfg.batch_size;
    Eigen::MatrixXd xb;
    Eigen::MatrixXd yb;

    for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(n, cfg.seed, epoch);
        double total = 0.0;
        for (Eigen::Index start = 0; start < n; start += bs) {
            const Eigen::Index nb = std::min(bs, n - start);
            xb.resize(data.features.rows(), nb);
            yb.resize(data.labels.rows(), nb);
            for (Eigen::Index k = 0; k < nb; ++k) {
                xb.col(k) = data.features.col(order[static_cast<std::size_t>(start + k)]);
                yb.col(k) = data.labels.col(order[static_cast<std::size_t>(start + k)]);
            }
            const double loss = loss_and_gradient(model, xb, yb, grads);
            if (!std::isfinite(loss)) {
                throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(start / bs) + " (learning rate " +
                                     format_double(state.learning_rate) + ")");
            }
            total += loss * static_cast<double>(nb);

            ++state.step;
            const double t = static_cast<double>(state.step);
            const double c1 = 1.0 - std::pow(cfg.beta1, t);
            const double c2 = 1.0 - std::pow(cfg.beta2, t);
            const double lr = state.learning_rate;
            for (std::size_t i = 0; i < layers.size(); ++i) {
                auto update = [&](auto& param, const auto& g, auto& m1, auto& m2) {
                    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
                    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseProduct(g);
                    param.array() -=
                        lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_epsilon);
                };
                update(layers[i]->weight, grads.weight[i], state.first_moment.weight[i],
                       state.second_moment.weight[i]);
                update(layers[i]->bias, grads.bias[i], state.first_moment.bias[i], state.second_moment.bias[i]);
            }
        }
        const double epoch_loss = total / static_cast<double>(n);
        state.loss_trace.push_back(epoch_loss);
        if (epoch_loss < state.best_loss) {
            state.best_loss = epoch_loss;
            state.since_best = 0;
        } else if (++state.since_best >= cfg.plateau_patience) {
            state.learning_rate /= 2.0;
            state.since_best = 0;
        }
        state.epochs_done = epoch + 1;
    }
    return {state.loss_trace};
}

// ---- gradient check -------------------------------------------------------------

namespace {

enum class Stage { branch, gate, trunk };

// The +h and -h passes travel together as a midpoint m and half-difference d,
// so a+ = m + d and a- = m - d. Every layer maps the pair exactly, and the
// loss gap comes out as 4 sum(e_m e_d) / n with no subtraction of two nearly
// equal losses. In plain double that subtraction costs about 1e-9 of absolute
// error at h = 1e-6, which swamps small gradients.
struct Pair {
    Eigen::MatrixXd m;
    Eigen::MatrixXd d;
};

struct Perturbation {
    Eigen::Index row = 0;
    Eigen::Index col = -1; ///< -1 for the bias
    double delta = 0.0;
};

struct PerturbedGaps {
    Eigen::VectorXd gap; ///< L(+h) - L(-h) per column
    std::vector<char> crossed; ///< a ReLU pre-activation changed sign versus the unperturbed pass
};

// Activation applied to a pre-activation pair; `ref` is the unperturbed pre-activation.
void activate_pair(Pair& z, Activation a, const Eigen::VectorXd& ref, std::vector<char>& crossed) {
    switch (a) {
    case Activation::relu:
        for (Eigen::Index c = 0; c < z.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < z.m.rows(); ++r) {
                const double up = z.m(r, c) + z.d(r, c);
                const double dn = z.m(r, c) - z.d(r, c);
                const bool on = ref[r] > 0.0;
                if ((up > 0.0) != on || (dn > 0.0) != on) {
                    crossed[static_cast<std::size_t>(c)] = 1;
                    const double ru = std::max(up, 0.0);
                    const double rd = std::max(dn, 0.0);
                    z.m(r, c) = 0.5 * (ru + rd);
                    z.d(r, c) = 0.5 * (ru - rd);
                } else if (!on) {
                    z.m(r, c) = 0.0;
                    z.d(r, c) = 0.0;
                }
            }
        }
        break;
    case Activation::sigmoid:
        for (Eigen::Index c = 0; c < z.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < z.m.rows(); ++r) {
                const double x = z.m(r, c);
                const double h = z.d(r, c);
                const double su = 1.0 / (1.0 + std::exp(-(x + h)));
                const double sd = 1.0 / (1.0 + std::exp(-(x - h)));
                z.m(r, c) = 0.5 * (su + sd);
                // sigma(x+h) - sigma(x-h) = sinh(h) / (cosh(x) + cosh(h))
                z.d(r, c) = 0.5 * std::sinh(h) / (std::cosh(x) + std::cosh(h));
            }
        }
        break;
    case Activation::linear:
        break;
    }
}

// Applies layers [from, end) of a stack to the pair.
Pair run_pair(const std::vector<Dense>& layers, std::size_t from, Pair a, const std::vector<Eigen::MatrixXd>& base,
              std::vector<char>& crossed) {
    for (std::size_t l = from; l < layers.size(); ++l) {
        Pair z{layers[l].weight * a.m, layers[l].weight * a.d};
        z.m.colwise() += layers[l].bias;
        // base[l + 1] holds post-activations; recompute the reference pre-activation
        const Eigen::VectorXd ref = layers[l].weight * base[l].col(0) + layers[l].bias;
        activate_pair(z, layers[l].activation, ref, crossed);
        a = std::move(z);
    }
    return a;
}

// Loss gaps of the sample when layer `local` of the given stage is perturbed
// by +-delta, one perturbation per column. Upstream activations come from the tape.
PerturbedGaps perturbed_gaps(const MlpModel& m, const Tape& t, const Eigen::VectorXd& label, Stage stage,
                             std::size_t branch, std::size_t local, const std::vector<Perturbation>& perts) {
    const auto k = static_cast<Eigen::Index>(perts.size());
    PerturbedGaps res;
    res.crossed.assign(perts.size(), 0);
    const std::vector<Dense>& stack = stage == Stage::branch ? m.branches[branch].layers
                                      : stage == Stage::gate ? m.gate
                                                             : m.trunk;
    const std::vector<Eigen::MatrixXd>& acts = stage == Stage::branch ? t.branch[branch]
                                               : stage == Stage::gate ? t.gate
                                                                      : t.trunk;
    const Dense& layer = stack[local];
    const Eigen::VectorXd a_in = acts[local].col(0);
    const Eigen::VectorXd z0 = layer.weight * a_in + layer.bias;
    Pair z{z0.replicate(1, k), Eigen::MatrixXd::Zero(z0.size(), k)};
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto& p = perts[static_cast<std::size_t>(c)];
        z.d(p.row, c) = p.col < 0 ? p.delta : p.delta * a_in[p.col];
    }
    activate_pair(z, layer.activation, z0, res.crossed);
    Pair out = run_pair(stack, local + 1, std::move(z), acts, res.crossed);

    if (stage == Stage::branch) {
        Pair concat{t.concat.replicate(1, k), Eigen::MatrixXd::Zero(t.concat.rows(), k)};
        Eigen::Index row = 0;
        for (std::size_t b = 0; b < branch; ++b) {
            row += t.branch[b].back().rows();
        }
        concat.m.middleRows(row, out.m.rows()) = out.m;
        concat.d.middleRows(row, out.d.rows()) = out.d;
        if (m.gate.empty()) {
            out = std::move(concat);
        } else {
            const Pair w = run_pair(m.gate, 0, concat, t.gate, res.crossed);
            // (c_m + c_d)(w_m + w_d) and (c_m - c_d)(w_m - w_d)
            out.m = concat.m.cwiseProduct(w.m) + concat.d.cwiseProduct(w.d);
            out.d = concat.m.cwiseProduct(w.d) + concat.d.cwiseProduct(w.m);
        }
        out = run_pair(m.trunk, 0, std::move(out), t.trunk, res.crossed);
    } else if (stage == Stage::gate) {
        const Eigen::MatrixXd c = t.concat.replicate(1, k);
        out = Pair{c.cwiseProduct(out.m), c.cwiseProduct(out.d)};
        out = run_pair(m.trunk, 0, std::move(out), t.trunk, res.crossed);
    }
    const Eigen::MatrixXd em =
        ((out.m.array().colwise() * m.output_scale.array()).matrix().colwise() + m.output_shift).colwise() - label;
    const Eigen::MatrixXd ed = (out.d.array().colwise() * m.output_scale.array()).matrix();
    res.gap = 4.0 * em.cwiseProduct(ed).colwise().sum().transpose() / static_cast<double>(em.rows());
    return res;
}

} // namespace

GradientCheckReport gradient_check_report(const MlpModel& model, const Sample& sample, double epsilon) {
    if (!(epsilon > 1e-8 && epsilon < 1e-3)) {
        throw DomainError("gradient check epsilon must lie in (1e-8, 1e-3)");
    }
    model.validate();
    Gradients analytic;
    loss_and_gradient(model, sample.features, sample.label, analytic);
    const Tape t = record(model, sample.features);

    struct LayerRef {
        Stage stage;
        std::size_t branch;
        std::size_t local;
    };
    std::vector<LayerRef> refs;
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
        for (std::size_t l = 0; l < model.branches[b].layers.size(); ++l) {
            refs.push_back({Stage::branch, b, l});
        }
    }
    for (std::size_t l = 0; l < model.gate.size(); ++l) {
        refs.push_back({Stage::gate, 0, l});
    }
    for (std::size_t l = 0; l < model.trunk.size(); ++l) {
        refs.push_back({Stage::trunk, 0, l});
    }

    // Gradients below this magnitude are compared in absolute terms; the
    // finite-difference roundoff floor scales with the loss over epsilon.
    double max_grad = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        max_grad = std::max({max_grad, analytic.weight[i].cwiseAbs().maxCoeff(), analytic.bias[i].cwiseAbs().maxCoeff()});
    }
    const double floor = std::max(1e-6 * max_grad, 1e-12);

    constexpr std::size_t chunk = 128;
    GradientCheckReport report;
    const auto layers = model.layers();
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Dense& layer = *layers[i];
        std::vector<std::pair<Perturbation, double>> params; // perturbation and analytic value
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                params.push_back({{r, c, 0.0}, analytic.weight[i](r, c)});
            }
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            params.push_back({{r, -1, 0.0}, analytic.bias[i][r]});
        }
        // Central differences at step h; returns indices whose +-h pair straddles a ReLU kink.
        auto check = [&](const std::vector<std::size_t>& which, double h) {
            std::vector<std::size_t> kinked;
            for (std::size_t s = 0; s < which.size(); s += chunk) {
                const std::size_t e = std::min(which.size(), s + chunk);
                std::vector<Perturbation> perts;
                perts.reserve(e - s);
                for (std::size_t p = s; p < e; ++p) {
                    const auto& pp = params[which[p]].first;
                    perts.push_back({pp.row, pp.col, h});
                }
                const PerturbedGaps res =
                    perturbed_gaps(model, t, sample.label, refs[i].stage, refs[i].branch, refs[i].local, perts);
                for (std::size_t p = s; p < e; ++p) {
                    const auto c = static_cast<Eigen::Index>(p - s);
                    if (res.crossed[static_cast<std::size_t>(c)]) {
                        kinked.push_back(which[p]);
                        continue;
                    }
                    const double numeric = res.gap[c] / (2.0 * h);
                    const double a = params[which[p]].second;
                    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
                    report.max_relative_error = std::max(report.max_relative_error, rel);
                    ++report.checked;
                }
            }
            return kinked;
        };
        std::vector<std::size_t> all(params.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto kinked = check(all, epsilon);
        // The derivative exists at the base point; a shorter step usually stays on one side.
        report.skipped += check(kinked, epsilon * 1e-2).size();
    }
    return report;
}

double gradient_check(const MlpModel& model, const Sample& sample, double epsilon) {
    return gradient_check_report(model, sample, epsilon).max_relative_error;
}

// ---- inference helpers ------------------------------------------------------------

CovMatrix lcnet_predict(const MlpModel& model, double coefficient, const Position& pos, double speed) {
    Eigen::VectorXd x(3);
    x << pos.x(), pos.y(), speed;
    const Eigen::VectorXd out = forward(model, x);
    const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(out.size()))));
    if (n * n != out.size()) {
        throw ConfigError("LCNET output width is not a square");
    }
    return psd_repair(unpack_cov(out) * coefficient);
}

Eigen::VectorXd lenet_features(const Channel& h, double zeta) {
    if (!(zeta > 0.0)) {
        throw DomainError("channel normalization zeta must be positive");
    }
    Eigen::VectorXd x(2 * h.size());
    x.head(h.size()) = h.real() / zeta;
    x.tail(h.size()) = h.imag() / zeta;
    return x;
}

Position lenet_predict(const MlpModel& model, double zeta, const Channel& h) {
    const Eigen::VectorXd out = forward(model, lenet_features(h, zeta));
    if (out.size() != 2) {
        throw ConfigError("LENET must output two coordinates");
    }
    return {out[0], out[1]};
}

Eigen::MatrixXd lenet_predict_batch(const MlpModel& model, double zeta, const Eigen::MatrixXcd& channels) {
    if (!(zeta > 0.0)) {
        throw DomainError("channel normalization zeta must be positive");
    }
    Eigen::MatrixXd x(2 * channels.rows(), channels.cols());
    x.topRows(channels.rows()) = channels.real() / zeta;
    x.bottomRows(channels.rows()) = channels.imag() / zeta;
    return forward_batch(model, x);
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << ' ' << format_double(m(i, j));
        }
    }
    out << '\n';
}

std::vector<std::pair<std::string, Dense*>> named_layers(MlpModel& m) {
    std::vector<std::pair<std::string, Dense*>> out;
    for (std::size_t b = 0; b < m.branches.size(); ++b) {
        for (std::size_t l = 0; l < m.branches[b].layers.size(); ++l) {
            out.emplace_back("branch" + std::to_string(b) + "." + std::to_string(l), &m.branches[b].layers[l]);
        }
    }
    for (std::size_t l = 0; l < m.gate.size(); ++l) {
        out.emplace_back("gate." + std::to_string(l), &m.gate[l]);
    }
    for (std::size_t l = 0; l < m.trunk.size(); ++l) {
        out.emplace_back("trunk." + std::to_string(l), &m.trunk[l]);
    }
    return out;
}

} // namespace

void save_checkpoint(std::ostream& out, const MlpModel& model, const TrainState* state) {
    model.validate();
    auto& m = const_cast<MlpModel&>(model);
    out << "mlpckpt 1\n" << architecture_of(model).describe() << '\n';
    const auto named = named_layers(m);
    for (const auto& [name, layer] : named) {
        write_tensor(out, name + ".weight", layer->weight);
        write_tensor(out, name + ".bias", layer->bias);
    }
    write_tensor(out, "input_shift", model.input_shift);
    write_tensor(out, "input_scale", model.input_scale);
    write_tensor(out, "output_shift", model.output_shift);
    write_tensor(out, "output_scale", model.output_scale);
    if (state != nullptr && state->initialized()) {
        out << "adam " << state->step << ' ' << format_double(state->learning_rate) << ' '
            << format_double(state->best_loss) << ' ' << state->since_best << ' ' << state->epochs_done << '\n';
        out << "loss_trace " << state->loss_trace.size();
        for (double v : state->loss_trace) {
            out << ' ' << format_double(v);
        }
        out << '\n';
        for (std::size_t i = 0; i < named.size(); ++i) {
            write_tensor(out, "m1." + named[i].first + ".weight", state->first_moment.weight[i]);
            write_tensor(out, "m1." + named[i].first + ".bias", state->first_moment.bias[i]);
            write_tensor(out, "m2." + named[i].first + ".weight", state->second_moment.weight[i]);
            write_tensor(out, "m2." + named[i].first + ".bias", state->second_moment.bias[i]);
        }
    }
    out << "end\n";
}

void save_checkpoint(const std::string& path, const MlpModel& model, const TrainState* state) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path);
    }
    save_checkpoint(out, model, state);
}

Checkpoint load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "mlpckpt 1") {
        throw ConfigError("not a version-1 MLP checkpoint");
    }
    if (!std::getline(in, line)) {
        throw ConfigError("checkpoint is missing the architecture line");
    }
    Checkpoint ck;
    ck.model = build(Architecture::parse(line), 0);

    std::map<std::string, Eigen::MatrixXd> tensors;
    std::optional<TrainState> state;
    bool ended = false;
    while (std::getline(in, line)) {
        const auto tok = split_ws(line);
        if (tok.empty()) {
            continue;
        }
        if (tok[0] == "end") {
            ended = true;
            break;
        }
        if (tok[0] == "tensor") {
            if (tok.size() < 4) {
                throw ConfigError("malformed tensor line");
            }
            const auto rows = parse_int(tok[2]);
            const auto cols = parse_int(tok[3]);
            if (rows < 0 || cols < 0 || static_cast<long long>(tok.size()) != 4 + rows * cols) {
                throw ConfigError("tensor " + std::string(tok[1]) + " has the wrong number of values");
            }
            Eigen::MatrixXd m(rows, cols);
            std::size_t k = 4;
            for (Eigen::Index i = 0; i < rows; ++i) {
                for (Eigen::Index j = 0; j < cols; ++j) {
                    m(i, j) = parse_double(tok[k++]);
                }
            }
            tensors[std::string(tok[1])] = std::move(m);
        } else if (tok[0] == "adam") {
            if (tok.size() != 6) {
                throw ConfigError("malformed optimizer line");
            }
            state.emplace();
            state->step = static_cast<std::uint64_t>(parse_int(tok[1]));
            state->learning_rate = parse_double(tok[2]);
            state->best_loss = parse_double(tok[3]);
            state->since_best = static_cast<int>(parse_int(tok[4]));
            state->epochs_done = static_cast<int>(parse_int(tok[5]));
        } else if (tok[0] == "loss_trace") {
            if (!state || tok.size() < 2 || static_cast<long long>(tok.size()) != 2 + parse_int(tok[1])) {
                throw ConfigError("malformed loss trace line");
            }
            for (std::size_t k = 2; k < tok.size(); ++k) {
                state->loss_trace.push_back(parse_double(tok[k]));
            }
        } else {
            throw ConfigError("unexpected checkpoint line starting with '" + std::string(tok[0]) + "'");
        }
    }
    if (!ended) {
        throw ConfigError("checkpoint is truncated");
    }

    auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw ConfigError("checkpoint is missing tensor " + name);
        }
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw ConfigError("tensor " + name + " has the wrong shape");
        }
        return it->second;
    };
    const auto named = named_layers(ck.model);
    for (const auto& [name, layer] : named) {
        layer->weight = take(name + ".weight", layer->weight.rows(), layer->weight.cols());
        layer->bias = take(name + ".bias", layer->bias.size(), 1);
    }
    ck.model.input_shift = take("input_shift", ck.model.input_width(), 1);
    ck.model.input_scale = take("input_scale", ck.model.input_width(), 1);
    ck.model.output_shift = take("output_shift", ck.model.output_width(), 1);
    ck.model.output_scale = take("output_scale", ck.model.output_width(), 1);
    if (state) {
        shape_like(ck.model, state->first_moment);
        shape_like(ck.model, state->second_moment);
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto& [name, layer] = named[i];
            state->first_moment.weight[i] = take("m1." + name + ".weight", layer->weight.rows(), layer->weight.cols());
            state->first_moment.bias[i] = take("m1." + name + ".bias", layer->bias.size(), 1);
            state->second_moment.weight[i] = take("m2." + name + ".weight", layer->weight.rows(), layer->weight.cols());
            state->second_moment.bias[i] = take("m2." + name + ".bias", layer->bias.size(), 1);
        }
        ck.state = std::move(state);
    }
    ck.model.validate();
    return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open checkpoint " + path);
    }
    return load_checkpoint(in);
}

} // namespace ccm::nn
