// SPDX-License-Identifier: Apache-2.0
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ccmlab/commands.hpp"
#include "ccmlab/config.hpp"
#include "ccmlab/covariance.hpp"
#include "ccmlab/denoise.hpp"
#include "ccmlab/errors.hpp"
#include "ccmlab/estimator.hpp"
#include "ccmlab/geometry.hpp"
#include "ccmlab/nn.hpp"
#include "ccmlab/scene.hpp"

namespace py = pybind11;
using namespace ccm;

namespace {

ArrayConfig array_of(int n_ele, int n_az, double spacing) {
    ArrayConfig a;
    a.n_ele = n_ele;
    a.n_az = n_az;
    a.spacing_ratio = spacing;
    a.validate();
    return a;
}

py::list report_rows(const ExperimentReport& rep) {
    py::list rows;
    for (const auto& r : rep.rows) {
        py::dict d;
        d["method"] = to_string(r.method);
        d["snr_db"] = r.snr_db;
        d["nmse_h"] = r.nmse_h;
        d["nmse_r"] = r.nmse_r ? py::cast(*r.nmse_r) : py::none();
        d["rmse_l"] = r.rmse_l ? py::cast(*r.rmse_l) : py::none();
        rows.append(d);
    }
    return rows;
}

std::string dump(const RunConfig& c) {
    nlohmann::json j;
    to_json(j, c);
    return j.dump(2);
}

} // namespace

PYBIND11_MODULE(_ccmlab, m) {
    m.doc() = "ccmlab: location-based CCM estimation";

    // ConfigError maps onto ValueError so ordinary `except ValueError` works.
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def(
        "steering_vector",
        [](double elevation, double azimuth, int n_ele, int n_az, double spacing) {
            return Channel(steering_vector(array_of(n_ele, n_az, spacing), elevation, azimuth));
        },
        py::arg("elevation"), py::arg("azimuth"), py::arg("n_ele") = 3, py::arg("n_az") = 4,
        py::arg("spacing") = 0.5);

    m.def(
        "channel_map",
        [](double x, double y) { return Channel(channel_map(ArrayConfig{}, default_scene(), Position(x, y))); },
        py::arg("x"), py::arg("y"), "Channel at a plane position in the default scene.");

    py::class_<ChannelGrid>(m, "ChannelGrid")
        .def(py::init([](int points_per_side) { return ChannelGrid(ArrayConfig{}, default_scene(), points_per_side); }),
             py::arg("points_per_side"))
        .def("__len__", &ChannelGrid::size)
        .def_property_readonly("channels", &ChannelGrid::channels, py::return_value_policy::reference_internal)
        .def(
            "discrete_ccm",
            [](const ChannelGrid& g, double x, double y, double speed) {
                return CovMatrix(g.discrete_ccm(RegionSpec{Position(x, y), speed, FrameTiming{}}));
            },
            py::arg("x"), py::arg("y"), py::arg("speed"));

    m.def("water_level", [](const std::vector<double>& lambda, double energy, double noise_std) {
        return water_level(lambda, energy, noise_std);
    }, py::arg("eigenvalues"), py::arg("energy"), py::arg("noise_std") = 1.0);

    m.def(
        "design_pilots",
        [](const CovMatrix& r, int m_p, double energy, double noise_std) {
            return Eigen::MatrixXcd(design_pilots(r, m_p, energy, noise_std).entries);
        },
        py::arg("r"), py::arg("m_p"), py::arg("energy"), py::arg("noise_std") = 1.0,
        "Water-filling pilot matrix (N_B x M_p).");

    m.def(
        "lmmse_estimate",
        [](const Eigen::VectorXcd& y, const Eigen::MatrixXcd& pilots, const CovMatrix& r, double noise_std) {
            PilotMatrix p;
            p.entries = pilots;
            p.energy = pilots.squaredNorm();
            p.noise_std = noise_std;
            return Channel(lmmse_estimate({y, noise_std * noise_std}, p, r));
        },
        py::arg("y"), py::arg("pilots"), py::arg("r"), py::arg("noise_std") = 1.0);

    m.def(
        "fuse",
        [](const Eigen::Vector2d& prior_mean, const Eigen::Matrix2d& prior_cov, const Eigen::Vector2d& error_mean,
           const Eigen::Matrix2d& error_cov, const Eigen::Vector2d& uploaded, double upload_var,
           const Eigen::Vector2d& lenet_estimate, double speed, double coct_duration) {
            ErrorStats st;
            st.mean = error_mean;
            st.cov = error_cov;
            const GaussianBelief b =
                fuse({prior_mean, prior_cov}, st, {uploaded, upload_var, lenet_estimate, speed, coct_duration});
            return py::make_tuple(Eigen::Vector2d(b.mean), Eigen::Matrix2d(b.cov));
        },
        py::arg("prior_mean"), py::arg("prior_cov"), py::arg("error_mean"), py::arg("error_cov"), py::arg("uploaded"),
        py::arg("upload_var"), py::arg("lenet_estimate"), py::arg("speed"), py::arg("coct_duration") = 0.255,
        "Posterior (mean, cov) of the location after one denoising step.");

    m.def(
        "gradient_check",
        [](const std::string& network, std::uint64_t seed, const Eigen::VectorXd& features, const Eigen::VectorXd& label,
           int n_antennas, double epsilon) {
            const nn::Architecture arch = network == "lcnet"   ? nn::lcnet_architecture(n_antennas)
                                          : network == "lenet" ? nn::lenet_architecture(n_antennas)
                                                               : throw ConfigError("network must be lcnet or lenet");
            return nn::gradient_check(nn::build(arch, seed), {features, label}, epsilon);
        },
        py::arg("network"), py::arg("seed"), py::arg("features"), py::arg("label"), py::arg("n_antennas") = 12,
        py::arg("epsilon") = 1e-6, "Max relative error of backprop against central differences.");

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("load", &load_run_config, py::arg("path"))
        .def_static("parse", &parse_run_config, py::arg("text"))
        .def("save", [](const RunConfig& c, const std::string& path) { save_run_config(c, path); })
        .def("to_json", &dump)
        .def("validate", &RunConfig::validate)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("output_dir", &RunConfig::output_dir)
        .def_readwrite("sigma_c", &RunConfig::sigma_c)
        .def_readwrite("snr_db", &RunConfig::snr_db)
        .def_readwrite("n_trajectories", &RunConfig::n_trajectories)
        .def_readwrite("n_coct", &RunConfig::n_coct)
        .def_property(
            "mode", [](const RunConfig& c) { return std::string(to_string(c.mode)); },
            [](RunConfig& c, const std::string& s) { c.mode = parse_trajectory_mode(s); });

    m.def("gen_dataset", [](const RunConfig& c) {
        std::ostringstream log;
        cmd_gen_dataset(c, log);
        return log.str();
    });
    m.def(
        "train",
        [](const RunConfig& c, const std::string& which, bool resume) {
            std::ostringstream log;
            cmd_train(c, parse_network(which), resume, log);
            return log.str();
        },
        py::arg("config"), py::arg("which"), py::arg("resume") = false);
    m.def("eval_models", [](const RunConfig& c) {
        std::ostringstream log;
        cmd_eval(c, log);
        return log.str();
    });
    m.def(
        "run",
        [](const RunConfig& c, bool train_missing) {
            std::ostringstream log;
            return report_rows(cmd_run(c, train_missing, log));
        },
        py::arg("config"), py::arg("train_missing") = false, "Runs the experiment; returns one dict per report row.");
}
