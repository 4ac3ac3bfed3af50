// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/datasets.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "ccmlab/errors.hpp"
#include "ccmlab/textio.hpp"

namespace ccm {

LcnetDataset LcnetDataset::head(Eigen::Index count) const {
    LcnetDataset d = *this;
    d.inputs = inputs.leftCols(count);
    d.labels = labels.leftCols(count);
    return d;
}

nn::Dataset LenetDataset::as_training() const {
    nn::Dataset d;
    d.features.resize(2 * channels.rows(), channels.cols());
    for (Eigen::Index i = 0; i < channels.cols(); ++i) {
        d.features.col(i) = nn::lenet_features(channels.col(i), zeta);
    }
    d.labels = positions;
    return d;
}

LenetDataset LenetDataset::head(Eigen::Index count) const {
    LenetDataset d = *this;
    d.channels = channels.leftCols(count);
    d.positions = positions.leftCols(count);
    return d;
}

LcnetDataset make_lcnet_dataset(const ChannelGrid& grid, const Bounds& bounds, const FrameTiming& timing,
                                SpeedRange speeds, int locations, int speeds_per_location, Rng& rng) {
    if (locations < 1 || speeds_per_location < 1) {
        throw DomainError("dataset sizes must be positive");
    }
    const std::size_t total = static_cast<std::size_t>(locations) * speeds_per_location;
    std::vector<CovMatrix> raw;
    raw.reserve(total);
    LcnetDataset d;
    d.inputs.resize(3, static_cast<Eigen::Index>(total));
    Eigen::Index col = 0;
    for (int l = 0; l < locations; ++l) {
        const Position p(rng.uniform(bounds.x_min, bounds.x_max), rng.uniform(bounds.y_min, bounds.y_max));
        for (int s = 0; s < speeds_per_location; ++s) {
            const double v = rng.uniform(speeds.lo, speeds.hi);
            raw.push_back(grid.discrete_ccm(RegionSpec{p, v, timing}));
            d.inputs.col(col++) << p.x(), p.y(), v;
        }
    }
    const ScaledLabels scaled = label_scale(raw);
    d.coefficient = scaled.coefficient;
    d.n_antennas = static_cast<int>(raw.front().rows());
    d.labels.resize(static_cast<Eigen::Index>(d.n_antennas) * d.n_antennas, static_cast<Eigen::Index>(total));
    for (std::size_t i = 0; i < total; ++i) {
        d.labels.col(static_cast<Eigen::Index>(i)) = pack_cov(scaled.labels[i]);
    }
    return d;
}

LenetDataset make_lenet_dataset(const ArrayConfig& cfg, const Scene& scene, int samples, double noise_ratio,
                                Rng& rng) {
    if (samples < 1 || !(noise_ratio >= 0.0)) {
        throw DomainError("LENET dataset needs a positive size and nonnegative noise ratio");
    }
    const Bounds& b = scene.plane_bounds;
    LenetDataset d;
    d.channels.resize(cfg.antennas(), samples);
    d.positions.resize(2, samples);
    double norm_sum = 0.0;
    double power_sum = 0.0;
    for (int i = 0; i < samples; ++i) {
        const Position p(rng.uniform(b.x_min, b.x_max), rng.uniform(b.y_min, b.y_max));
        d.positions.col(i) = p;
        d.channels.col(i) = channel_map(cfg, scene, p);
        norm_sum += d.channels.col(i).norm();
        power_sum += d.channels.col(i).squaredNorm();
    }
    d.zeta = norm_sum / samples;
    d.noise_var = noise_ratio * (power_sum / samples) / cfg.antennas();
    if (d.noise_var > 0.0) {
        for (Eigen::Index j = 0; j < d.channels.cols(); ++j) {
            for (Eigen::Index i = 0; i < d.channels.rows(); ++i) {
                d.channels(i, j) += rng.complex_normal(d.noise_var);
            }
        }
    }
    return d;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    return out;
}

// First line: "# <kind> 1 key=value ...".
std::map<std::string, std::string> read_meta(std::istream& in, const std::string& kind, const std::string& path) {
    std::string line;
    std::getline(in, line);
    const auto tok = split_ws(line);
    if (tok.size() < 3 || tok[0] != "#" || tok[1] != kind || tok[2] != "1") {
        throw ConfigError(path + " is not a " + kind + " file");
    }
    std::map<std::string, std::string> meta;
    for (std::size_t i = 3; i < tok.size(); ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos) {
            throw ConfigError("malformed metadata in " + path);
        }
        meta[std::string(tok[i].substr(0, eq))] = std::string(tok[i].substr(eq + 1));
    }
    return meta;
}

const std::string& need(const std::map<std::string, std::string>& meta, const std::string& key,
                        const std::string& path) {
    const auto it = meta.find(key);
    if (it == meta.end()) {
        throw ConfigError("missing '" + key + "' in " + path);
    }
    return it->second;
}

std::vector<std::vector<double>> read_rows(std::istream& in, std::size_t width, const std::string& path) {
    std::string line;
    std::getline(in, line); // column header
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != width) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                              " columns");
        }
        std::vector<double> row(width);
        for (std::size_t i = 0; i < width; ++i) {
            row[i] = parse_double(cells[i]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

void save_lcnet_dataset(const LcnetDataset& d, const std::string& path) {
    auto out = open_out(path);
    out << "# lcnet-dataset 1 coefficient=" << format_double(d.coefficient) << " n_antennas=" << d.n_antennas
        << '\n';
    out << "x1,x2,v";
    for (Eigen::Index i = 0; i < d.labels.rows(); ++i) {
        out << ",l" << i;
    }
    out << '\n';
    for (Eigen::Index s = 0; s < d.size(); ++s) {
        for (Eigen::Index i = 0; i < 3; ++i) {
            out << (i ? "," : "") << format_double(d.inputs(i, s));
        }
        for (Eigen::Index i = 0; i < d.labels.rows(); ++i) {
            out << ',' << format_double(d.labels(i, s));
        }
        out << '\n';
    }
}

LcnetDataset load_lcnet_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open dataset " + path);
    }
    const auto meta = read_meta(in, "lcnet-dataset", path);
    LcnetDataset d;
    d.coefficient = parse_double(need(meta, "coefficient", path));
    d.n_antennas = static_cast<int>(parse_int(need(meta, "n_antennas", path)));
    const auto width = static_cast<std::size_t>(3 + d.n_antennas * d.n_antennas);
    const auto rows = read_rows(in, width, path);
    d.inputs.resize(3, static_cast<Eigen::Index>(rows.size()));
    d.labels.resize(static_cast<Eigen::Index>(width - 3), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const auto c = static_cast<Eigen::Index>(s);
        d.inputs.col(c) = Eigen::Map<const Eigen::Vector3d>(rows[s].data());
        d.labels.col(c) = Eigen::Map<const Eigen::VectorXd>(rows[s].data() + 3, d.labels.rows());
    }
    return d;
}

void save_lenet_dataset(const LenetDataset& d, const std::string& path) {
    auto out = open_out(path);
    out << "# lenet-dataset 1 zeta=" << format_double(d.zeta) << " noise_var=" << format_double(d.noise_var)
        << " n_antennas=" << d.channels.rows() << '\n';
    for (Eigen::Index i = 0; i < d.channels.rows(); ++i) {
        out << "re" << i << ',';
    }
    for (Eigen::Index i = 0; i < d.channels.rows(); ++i) {
        out << "im" << i << ',';
    }
    out << "x1,x2\n";
    for (Eigen::Index s = 0; s < d.size(); ++s) {
        for (Eigen::Index i = 0; i < d.channels.rows(); ++i) {
            out << format_double(d.channels(i, s).real()) << ',';
        }
        for (Eigen::Index i = 0; i < d.channels.rows(); ++i) {
            out << format_double(d.channels(i, s).imag()) << ',';
        }
        out << format_double(d.positions(0, s)) << ',' << format_double(d.positions(1, s)) << '\n';
    }
}

LenetDataset load_lenet_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open dataset " + path);
    }
    const auto meta = read_meta(in, "lenet-dataset", path);
    LenetDataset d;
    d.zeta = parse_double(need(meta, "zeta", path));
    d.noise_var = parse_double(need(meta, "noise_var", path));
    const int nb = static_cast<int>(parse_int(need(meta, "n_antennas", path)));
    const auto rows = read_rows(in, static_cast<std::size_t>(2 * nb + 2), path);
    d.channels.resize(nb, static_cast<Eigen::Index>(rows.size()));
    d.positions.resize(2, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const auto c = static_cast<Eigen::Index>(s);
        for (int i = 0; i < nb; ++i) {
            d.channels(i, c) = {rows[s][static_cast<std::size_t>(i)], rows[s][static_cast<std::size_t>(nb + i)]};
        }
        d.positions.col(c) << rows[s][static_cast<std::size_t>(2 * nb)], rows[s][static_cast<std::size_t>(2 * nb + 1)];
    }
    return d;
}

} // namespace ccm
