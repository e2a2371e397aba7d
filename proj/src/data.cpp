#include "cure/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cure/error.hpp"
#include "cure/random.hpp"

namespace cure {
namespace {

constexpr double kPi = std::numbers::pi;

// Scales every column into [0, 1] in place; constant columns map to 0.
void minmax_scale(std::vector<double>& values, std::size_t n, std::size_t d, std::vector<double>& mins,
                  std::vector<double>& maxs)
{
    mins.assign(d, 0.0);
    maxs.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double lo = values[j];
        double hi = values[j];
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, values[i * d + j]);
            hi = std::max(hi, values[i * d + j]);
        }
        mins[j] = lo;
        maxs[j] = hi;
        const double range = hi - lo;
        for (std::size_t i = 0; i < n; ++i) {
            double& v = values[i * d + j];
            v = range > 0.0 ? (v - lo) / range : 0.0;
        }
    }
}

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        out.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

bool parse_double(const std::string& text, double& out)
{
    if (text.empty()) {
        return false;
    }
    char* end = nullptr;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(out);
}

constexpr std::array<std::array<double, 5>, 6> kSeverityTable{{
    {0.02, 0.04, 0.08, 0.12, 0.18},                               // gaussian std
    {0.01, 0.02, 0.04, 0.07, 0.10},                               // impulse flip fraction
    {0.05, 0.10, 0.15, 0.22, 0.30},                               // speckle std
    {1.0 / 60.0, 1.0 / 25.0, 1.0 / 12.0, 1.0 / 5.0, 1.0 / 3.0}, // shot: 1 / photon scale
    {0.05, 0.10, 0.15, 0.22, 0.30},                               // brightness shift
    {0.15, 0.30, 0.45, 0.60, 0.75},                               // contrast: 1 - blend factor
}};

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& index) const
{
    const std::size_t d = dim();
    const auto src = features.data();
    std::vector<double> values;
    values.reserve(index.size() * d);
    Dataset out;
    out.labels.reserve(index.size());
    for (const auto i : index) {
        if (i >= size()) {
            throw InvalidArgument("subset index " + std::to_string(i) + " out of range");
        }
        values.insert(values.end(), src.begin() + static_cast<std::ptrdiff_t>(i * d),
                      src.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        out.labels.push_back(labels[i]);
    }
    out.features = Tensor::from({index.size(), d}, std::move(values));
    out.num_classes = num_classes;
    out.lo = lo;
    out.hi = hi;
    out.scale_min = scale_min;
    out.scale_max = scale_max;
    out.name = name;
    out.seed = seed;
    return out;
}

void Dataset::validate() const
{
    if (labels.empty()) {
        throw InvalidArgument("dataset '" + name + "' is empty");
    }
    if (features.rank() != 2 || features.dim(0) != labels.size()) {
        throw ShapeError("dataset '" + name + "': features " + shape_string(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    for (const int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw InvalidArgument("dataset '" + name + "': label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
    for (const double v : features.data()) {
        if (v < lo || v > hi) {
            throw InvalidArgument("dataset '" + name + "': feature value outside the clamp range");
        }
    }
}

SyntheticKind parse_synthetic_kind(std::string_view name)
{
    if (name == "two_moons") return SyntheticKind::TwoMoons;
    if (name == "spirals") return SyntheticKind::Spirals;
    if (name == "gaussians") return SyntheticKind::Gaussians;
    if (name == "circles") return SyntheticKind::Circles;
    throw InvalidArgument("unknown synthetic dataset kind '" + std::string(name) + "'");
}

std::string_view to_string(SyntheticKind kind)
{
    switch (kind) {
    case SyntheticKind::TwoMoons: return "two_moons";
    case SyntheticKind::Spirals: return "spirals";
    case SyntheticKind::Gaussians: return "gaussians";
    case SyntheticKind::Circles: return "circles";
    }
    return "unknown";
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise_std, std::uint64_t seed)
{
    if (n < 2) {
        throw InvalidArgument("gen_synthetic: n must be at least 2");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw InvalidArgument("gen_synthetic: noise_std must be non-negative");
    }
    Rng rng(seed, std::string("synthetic.") + std::string(to_string(kind)));
    std::vector<double> values(2 * n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        labels[i] = c;
        double x = 0.0;
        double y = 0.0;
        switch (kind) {
        case SyntheticKind::TwoMoons: {
            const double t = rng.uniform(0.0, kPi);
            if (c == 0) {
                x = std::cos(t);
                y = std::sin(t);
            } else {
                x = 1.0 - std::cos(t);
                y = 0.5 - std::sin(t);
            }
            break;
        }
        case SyntheticKind::Spirals: {
            const double t = rng.uniform(0.05, 1.0);
            const double angle = 3.0 * kPi * t + (c == 0 ? 0.0 : kPi);
            x = t * std::cos(angle);
            y = t * std::sin(angle);
            break;
        }
        case SyntheticKind::Gaussians:
            x = c == 0 ? -1.0 : 1.0;
            y = c == 0 ? -1.0 : 1.0;
            break;
        case SyntheticKind::Circles: {
            const double t = rng.uniform(0.0, 2.0 * kPi);
            const double r = c == 0 ? 1.0 : 0.5;
            x = r * std::cos(t);
            y = r * std::sin(t);
            break;
        }
        }
        if (noise_std > 0.0) {
            x += rng.normal(0.0, noise_std);
            y += rng.normal(0.0, noise_std);
        }
        values[2 * i] = x;
        values[2 * i + 1] = y;
    }
    Dataset ds;
    minmax_scale(values, n, 2, ds.scale_min, ds.scale_max);
    ds.features = Tensor::from({n, 2}, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = 2;
    ds.name = std::string(to_string(kind));
    ds.seed = seed;
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::string_view label_column)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open CSV file " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError(path.string() + ": missing header row");
    }
    const auto header = split_fields(line);
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) {
        throw IoError(path.string() + ": no column named '" + std::string(label_column) + "'");
    }
    const auto label_index = static_cast<std::size_t>(label_it - header.begin());
    const std::size_t d = header.size() - 1;
    if (d == 0) {
        throw IoError(path.string() + ": no feature columns");
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw IoError(path.string() + ": row " + std::to_string(line_no) + " has " +
                          std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
        }
        for (std::size_t j = 0; j < fields.size(); ++j) {
            double v = 0.0;
            if (!parse_double(fields[j], v)) {
                throw IoError(path.string() + ": row " + std::to_string(line_no) + ", column '" + header[j] +
                              "': not a number: '" + fields[j] + "'");
            }
            if (j == label_index) {
                if (v != std::floor(v) || v < 0.0 || v > 1e9) {
                    throw IoError(path.string() + ": row " + std::to_string(line_no) +
                                  ": label is not a non-negative integer: '" + fields[j] + "'");
                }
                labels.push_back(static_cast<int>(v));
            } else {
                values.push_back(v);
            }
        }
    }
    if (labels.empty()) {
        throw IoError(path.string() + ": no data rows");
    }
    Dataset ds;
    const std::size_t n = labels.size();
    minmax_scale(values, n, d, ds.scale_min, ds.scale_max);
    ds.features = Tensor::from({n, d}, std::move(values));
    ds.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    ds.num_classes = std::max<std::size_t>(ds.num_classes, 2);
    ds.labels = std::move(labels);
    ds.name = path.filename().string();
    return ds;
}

void save_csv(const std::filesystem::path& path, const Dataset& ds)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    const std::size_t d = ds.dim();
    for (std::size_t j = 0; j < d; ++j) {
        out << 'x' << j << ',';
    }
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features.at(i, j));
            out << buf << ',';
        }
        out << ds.labels[i] << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

Split split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed)
{
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw InvalidArgument("test fraction must lie in (0, 1)");
    }
    const std::size_t n = ds.size();
    if (n < 2) {
        throw InvalidArgument("cannot split fewer than two samples");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(seed, "split");
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    Split s{ds.subset(train_idx), ds.subset(test_idx)};
    s.train.name = ds.name + ".train";
    s.test.name = ds.name + ".test";
    return s;
}

namespace {

std::vector<Batch> make_batches(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t batch_size)
{
    if (batch_size == 0) {
        throw InvalidArgument("batch_size must be at least 1");
    }
    const std::size_t n = order.size();
    const std::size_t d = ds.dim();
    const auto src = ds.features.data();
    std::vector<Batch> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        Batch b;
        std::vector<double> values;
        values.reserve((stop - start) * d);
        for (std::size_t k = start; k < stop; ++k) {
            const std::size_t i = order[k];
            values.insert(values.end(), src.begin() + static_cast<std::ptrdiff_t>(i * d),
                          src.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
            b.y.push_back(ds.labels[i]);
            b.index.push_back(i);
        }
        b.x = Tensor::from({stop - start, d}, std::move(values));
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed, std::size_t epoch)
{
    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(substream_seed(shuffle_seed, "shuffle", epoch));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return make_batches(ds, order, batch_size);
}

std::vector<Batch> ordered_batches(const Dataset& ds, std::size_t batch_size)
{
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    return make_batches(ds, order, batch_size);
}

// ---------------------------------------------------------------------------
// Corruptions

CorruptionKind parse_corruption_kind(std::string_view name)
{
    for (const auto k : all_corruption_kinds()) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw InvalidArgument("unknown corruption kind '" + std::string(name) + "'");
}

std::string_view to_string(CorruptionKind kind)
{
    switch (kind) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::SpeckleNoise: return "speckle_noise";
    case CorruptionKind::ShotNoise: return "shot_noise";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Contrast: return "contrast";
    }
    return "unknown";
}

const std::vector<CorruptionKind>& all_corruption_kinds()
{
    static const std::vector<CorruptionKind> kinds{CorruptionKind::GaussianNoise, CorruptionKind::ImpulseNoise,
                                                   CorruptionKind::SpeckleNoise,  CorruptionKind::ShotNoise,
                                                   CorruptionKind::Brightness,    CorruptionKind::Contrast};
    return kinds;
}

double corruption_magnitude(CorruptionSpec spec)
{
    if (spec.severity < 1 || spec.severity > 5) {
        throw InvalidArgument("corruption severity must be 1..5, got " + std::to_string(spec.severity));
    }
    return kSeverityTable[static_cast<std::size_t>(spec.kind)][static_cast<std::size_t>(spec.severity - 1)];
}

Dataset corrupt(const Dataset& ds, CorruptionSpec spec, std::uint64_t seed)
{
    return corrupt_with_magnitude(ds, spec.kind, corruption_magnitude(spec), seed);
}

Dataset corrupt_with_magnitude(const Dataset& ds, CorruptionKind kind, double magnitude, std::uint64_t seed)
{
    if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
        throw InvalidArgument("corruption magnitude must be non-negative");
    }
    Dataset out = ds;
    out.features = ds.features.detach();
    if (magnitude == 0.0) {
        return out;
    }
    Rng rng(substream_seed(seed, "corrupt", static_cast<std::uint64_t>(kind)));
    auto x = out.features.mutable_data();
    const std::size_t d = ds.dim();
    const std::size_t n = ds.size();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = x.data() + i * d;
        double row_mean = 0.0;
        if (kind == CorruptionKind::Contrast) {
            for (std::size_t j = 0; j < d; ++j) {
                row_mean += row[j];
            }
            row_mean /= static_cast<double>(d);
        }
        for (std::size_t j = 0; j < d; ++j) {
            double& v = row[j];
            switch (kind) {
            case CorruptionKind::GaussianNoise:
                v += magnitude * rng.normal();
                break;
            case CorruptionKind::ImpulseNoise:
                if (rng.uniform() < magnitude) {
                    v = rng.uniform() < 0.5 ? ds.lo : ds.hi;
                }
                break;
            case CorruptionKind::SpeckleNoise:
                v += v * magnitude * rng.normal();
                break;
            case CorruptionKind::ShotNoise:
                // Poisson(v / m) * m, approximated by its normal limit.
                v += std::sqrt(std::max(v - ds.lo, 0.0) * magnitude) * rng.normal();
                break;
            case CorruptionKind::Brightness:
                v += magnitude;
                break;
            case CorruptionKind::Contrast:
                v = row_mean + (1.0 - magnitude) * (v - row_mean);
                break;
            }
            v = std::clamp(v, ds.lo, ds.hi);
        }
    }
    return out;
}

} // namespace cure
