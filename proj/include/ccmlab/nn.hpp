// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccmlab/covariance.hpp"
#include "ccmlab/geometry.hpp"
#include "ccmlab/scene.hpp"

namespace ccm::nn {

enum class Activation { relu, sigmoid, linear };

const char* to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Fully connected layer: act(W x + b).
struct Dense {
    Eigen::MatrixXd weight; ///< out x in
    Eigen::VectorXd bias;   ///< out
    Activation activation = Activation::relu;

    Eigen::Index in() const { return weight.cols(); }
    Eigen::Index out() const { return weight.rows(); }
};

/// Input subnetwork applied to the slice [offset, offset + width) of the features.
struct Branch {
    Eigen::Index offset = 0;
    Eigen::Index width = 0;
    std::vector<Dense> layers;

    Eigen::Index out() const { return layers.empty() ? width : layers.back().out(); }
};

/// Feedforward network with optional feature-fusion front end.
///
/// With branches, each branch processes its input slice and the results are
/// concatenated. When a gate is present, the concatenation is also fed through
/// the gate layers and the (sigmoid) gate output multiplies the concatenation
/// element-wise before the trunk. Without branches the trunk reads the
/// normalized input directly.
///
/// Inputs are standardized as (x - input_shift) / input_scale and outputs are
/// produced as output_shift + output_scale * trunk(...); these affine maps are
/// fixed when training starts and are not trained.
struct MlpModel {
    std::vector<Branch> branches;
    std::vector<Dense> gate;
    std::vector<Dense> trunk;
    Eigen::VectorXd input_shift;
    Eigen::VectorXd input_scale;
    Eigen::VectorXd output_shift;
    Eigen::VectorXd output_scale;

    Eigen::Index input_width() const { return input_shift.size(); }
    Eigen::Index output_width() const { return output_shift.size(); }
    std::size_t parameter_count() const;

    /// Throws ConfigError when widths do not chain.
    void validate() const;

    /// Every trainable layer: branch layers in order, then gate, then trunk.
    std::vector<Dense*> layers();
    std::vector<const Dense*> layers() const;

    bool operator==(const MlpModel& other) const;
};

struct LayerSpec {
    int width = 0;
    Activation activation = Activation::relu;
};

struct BranchSpec {
    int offset = 0;
    int width = 0;
    std::vector<LayerSpec> layers;
};

/// Architecture without parameters.
struct Architecture {
    int inputs = 0;
    std::vector<BranchSpec> branches;
    std::vector<LayerSpec> gate;
    std::vector<LayerSpec> trunk;

    /// One-line description used in checkpoints.
    std::string describe() const;
    static Architecture parse(const std::string& line);
};

Architecture architecture_of(const MlpModel& model);

/// Allocate and initialize a model (uniform fan-in scaling, zero biases).
MlpModel build(const Architecture& arch, std::uint64_t seed);

/// Location/speed -> packed CCM network with the attention gate.
Architecture lcnet_architecture(int n_antennas);
/// Normalized channel -> plane coordinates network.
Architecture lenet_architecture(int n_antennas);

struct Sample {
    Eigen::VectorXd features;
    Eigen::VectorXd label;
};

/// Column-per-sample training matrices.
struct Dataset {
    Eigen::MatrixXd features; ///< inputs x samples
    Eigen::MatrixXd labels;   ///< outputs x samples

    Eigen::Index size() const { return features.cols(); }
    static Dataset from_samples(const std::vector<Sample>& samples);
};

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& features);
Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& features);

/// Set input/output standardization from data statistics (unit scale for constant columns).
void fit_normalization(MlpModel& model, const Dataset& data);

/// Mean squared error over all outputs and samples.
double mse_loss(const MlpModel& model, const Dataset& data);

struct Gradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
};

/// Loss and its gradient with respect to every trainable layer (order of MlpModel::layers()).
double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
                         Gradients& grads);

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 64;
    int epochs = 20;
    int plateau_patience = 5; ///< epochs without improvement before halving the learning rate
    std::uint64_t seed = 1;

    void validate() const;
};

/// Optimizer state carried across epochs; persisted with checkpoints for resumption.
struct TrainState {
    Gradients first_moment;
    Gradients second_moment;
    std::uint64_t step = 0;
    double learning_rate = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    int epochs_done = 0;
    std::vector<double> loss_trace;

    bool initialized() const { return !first_moment.weight.empty(); }
};

struct TrainResult {
    std::vector<double> loss_trace; ///< mean training loss of each epoch
};

/// Adam on the MSE loss. Batch order of epoch e is a seeded permutation
/// depending only on (seed, e), so runs resumed from a saved state reproduce
/// uninterrupted runs bit-for-bit. Throws NumericalError on a non-finite loss.
TrainResult train(MlpModel& model, const Dataset& data, const TrainConfig& cfg);
TrainResult train(MlpModel& model, const Dataset& data, const TrainConfig& cfg, TrainState& state);

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Parameters whose +-step straddles a ReLU kink even after shrinking the
    /// step 100x; the finite difference is meaningless there, so they are left out.
    std::size_t skipped = 0;
};

/// Compares backprop against central finite differences of the single-sample
/// MSE loss for every trainable parameter.
GradientCheckReport gradient_check_report(const MlpModel& model, const Sample& sample, double epsilon);

/// Max relative discrepancy from gradient_check_report().
double gradient_check(const MlpModel& model, const Sample& sample, double epsilon);

/// Forward, unpack, undo label scaling, repair to PSD.
CovMatrix lcnet_predict(const MlpModel& model, double coefficient, const Position& pos, double speed);

/// Plane coordinates estimated from [Re(h); Im(h)] / zeta.
Position lenet_predict(const MlpModel& model, double zeta, const Channel& h);
/// Column-per-channel batch version, returns 2 x K.
Eigen::MatrixXd lenet_predict_batch(const MlpModel& model, double zeta, const Eigen::MatrixXcd& channels);

Eigen::VectorXd lenet_features(const Channel& h, double zeta);

// ---- checkpoints ----

/// Text checkpoint: "mlpckpt 1", the architecture line, then one line per tensor.
void save_checkpoint(std::ostream& out, const MlpModel& model, const TrainState* state = nullptr);
void save_checkpoint(const std::string& path, const MlpModel& model, const TrainState* state = nullptr);

struct Checkpoint {
    MlpModel model;
    std::optional<TrainState> state;
};

Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

} // namespace ccm::nn
