#include "cure/analysis.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "cure/error.hpp"
#include "cure/random.hpp"

namespace cure {
namespace {

// Column-centered copy of an [n x d] matrix, row-major.
std::vector<double> centered_columns(const Tensor& f, bool center)
{
    const std::size_t n = f.dim(0);
    const std::size_t d = f.dim(1);
    std::vector<double> out(f.data().begin(), f.data().end());
    if (!center) {
        return out;
    }
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            m += out[i * d + j];
        }
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i * d + j] -= m;
        }
    }
    return out;
}

// Squared Frobenius norm of A^T B for row-major A [n x da], B [n x db];
// equals <A A^T, B B^T>_F.
double cross_norm_sq(const std::vector<double>& a, std::size_t da, const std::vector<double>& b, std::size_t db,
                     std::size_t n)
{
    double total = 0.0;
    for (std::size_t p = 0; p < da; ++p) {
        for (std::size_t q = 0; q < db; ++q) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += a[i * da + p] * b[i * db + q];
            }
            total += acc * acc;
        }
    }
    return total;
}

constexpr std::array<char, 8> kDumpMagic{'C', 'U', 'R', 'E', 'M', 'A', 'S', 'K'};
constexpr std::uint32_t kDumpVersion = 1;

template <class T>
void put(std::ostream& out, T value)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
bool get(std::istream& in, T& value)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
        return false;
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    std::memcpy(&value, bytes.data(), sizeof(T));
    return true;
}

} // namespace

double linear_cka(const Tensor& f1, const Tensor& f2, bool centered)
{
    if (f1.rank() != 2 || f2.rank() != 2 || f1.dim(0) != f2.dim(0)) {
        throw ShapeError("linear_cka: activation sets " + shape_string(f1.shape()) + " and " +
                         shape_string(f2.shape()) + " do not share rows");
    }
    const std::size_t n = f1.dim(0);
    if (n < 2) {
        throw InvalidArgument("linear_cka: need at least two samples");
    }
    const std::size_t d1 = f1.dim(1);
    const std::size_t d2 = f2.dim(1);
    const auto a = centered_columns(f1, centered);
    const auto b = centered_columns(f2, centered);
    const double k12 = cross_norm_sq(a, d1, b, d2, n);
    const double k11 = cross_norm_sq(a, d1, a, d1, n);
    const double k22 = cross_norm_sq(b, d2, b, d2, n);
    if (k11 <= 0.0 || k22 <= 0.0) {
        throw NumericError("linear_cka: zero-norm Gram matrix (constant activations)");
    }
    return k12 / (std::sqrt(k11) * std::sqrt(k22));
}

std::vector<std::vector<double>> cka_matrix(const BlockModel& a, const BlockModel& b, const Tensor& probe,
                                            bool centered)
{
    std::vector<Tensor> fa;
    std::vector<Tensor> fb;
    {
        NoGradGuard guard;
        fa = a.block_outputs(probe);
        fb = b.block_outputs(probe);
    }
    std::vector<std::vector<double>> out(fa.size(), std::vector<double>(fb.size(), 0.0));
    for (std::size_t i = 0; i < fa.size(); ++i) {
        for (std::size_t j = 0; j < fb.size(); ++j) {
            out[i][j] = linear_cka(fa[i], fb[j], centered);
        }
    }
    return out;
}

double nrr(double nat_acc, double rob_acc)
{
    if (!(nat_acc >= 0.0 && nat_acc <= 100.0) || !(rob_acc >= 0.0 && rob_acc <= 100.0)) {
        throw InvalidArgument("nrr: accuracies must lie in [0, 100]");
    }
    if (nat_acc + rob_acc == 0.0) {
        throw InvalidArgument("nrr: undefined when both accuracies are zero");
    }
    return 2.0 * nat_acc * rob_acc / (nat_acc + rob_acc);
}

TradeoffRow tradeoff_row(double nat_acc, double rob_acc)
{
    return TradeoffRow{nat_acc, rob_acc, nrr(nat_acc, rob_acc)};
}

double evaluate(const Classifier& model, const Dataset& ds, const std::optional<EvalAttack>& attack,
                std::uint64_t seed, std::size_t batch_size)
{
    std::size_t correct = 0;
    const auto chunks = ordered_batches(ds, batch_size);
    for (std::size_t b = 0; b < chunks.size(); ++b) {
        const auto& batch = chunks[b];
        Tensor x = batch.x;
        if (attack) {
            if (attack->kind == AttackKind::Fgsm) {
                x = fgsm(model, batch.x, batch.y, attack->config);
            } else {
                x = pgd(model, batch.x, batch.y, attack->config, substream_seed(seed, "eval", b));
            }
        }
        const auto pred = predict(model, x);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            correct += pred[i] == batch.y[i] ? 1 : 0;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<SweepPoint> strength_sweep(const Classifier& model, const Dataset& ds, const std::vector<double>& eps_list,
                                       const AttackConfig& tmpl, std::uint64_t seed)
{
    if (eps_list.empty()) {
        throw InvalidArgument("strength_sweep: empty epsilon list");
    }
    for (std::size_t i = 1; i < eps_list.size(); ++i) {
        if (eps_list[i] < eps_list[i - 1]) {
            throw InvalidArgument("strength_sweep: epsilon list must be ascending");
        }
    }
    std::vector<SweepPoint> out;
    for (const double eps : eps_list) {
        if (eps == 0.0) {
            out.push_back({eps, evaluate(model, ds, std::nullopt, seed)});
            continue;
        }
        AttackConfig cfg = tmpl;
        cfg.epsilon = eps;
        cfg.step_size = eps / 4.0;
        out.push_back({eps, evaluate(model, ds, EvalAttack{AttackKind::Pgd, cfg}, seed)});
    }
    return out;
}

std::vector<double> default_sweep_grid()
{
    return {0.25 / 255.0, 0.5 / 255.0, 1.0 / 255.0, 2.0 / 255.0, 4.0 / 255.0, 6.0 / 255.0, 8.0 / 255.0};
}

// ---------------------------------------------------------------------------

MaskDumpWriter::MaskDumpWriter(const std::filesystem::path& path, std::vector<std::string> names,
                               std::vector<std::size_t> sizes)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path), sizes_(std::move(sizes))
{
    if (!out_) {
        throw IoError("cannot open mask dump " + path.string());
    }
    if (names.size() != sizes_.size()) {
        throw InvalidArgument("mask dump: names and sizes differ in length");
    }
    out_.write(kDumpMagic.data(), kDumpMagic.size());
    put<std::uint32_t>(out_, kDumpVersion);
    put<std::uint32_t>(out_, static_cast<std::uint32_t>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
        put<std::uint32_t>(out_, static_cast<std::uint32_t>(names[i].size()));
        out_.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
        put<std::uint64_t>(out_, sizes_[i]);
    }
}

void MaskDumpWriter::append(std::size_t epoch, const GradMask& mask, const std::vector<std::vector<double>>& grads)
{
    if (mask.keep.size() != sizes_.size() || grads.size() != sizes_.size()) {
        throw ShapeError("mask dump: entry does not match the declared tensors");
    }
    put<std::uint64_t>(out_, epoch);
    for (std::size_t t = 0; t < sizes_.size(); ++t) {
        if (mask.keep[t].size() != sizes_[t] || grads[t].size() != sizes_[t]) {
            throw ShapeError("mask dump: tensor " + std::to_string(t) + " has the wrong size");
        }
        std::vector<char> bits((sizes_[t] + 7) / 8, 0);
        for (std::size_t k = 0; k < sizes_[t]; ++k) {
            if (mask.keep[t][k] != 0) {
                bits[k / 8] = static_cast<char>(bits[k / 8] | (1 << (k % 8)));
            }
        }
        out_.write(bits.data(), static_cast<std::streamsize>(bits.size()));
        for (const double g : grads[t]) {
            put<double>(out_, g);
        }
    }
    out_.flush();
    if (!out_) {
        throw IoError("failed writing mask dump " + path_.string());
    }
}

MaskDump read_mask_dump(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("missing mask dump " + path.string());
    }
    std::array<char, 8> magic{};
    std::uint32_t version = 0;
    std::uint32_t count = 0;
    if (!in.read(magic.data(), magic.size()) || magic != kDumpMagic || !get(in, version) ||
        version != kDumpVersion || !get(in, count)) {
        throw IoError(path.string() + " is not a mask dump");
    }
    MaskDump dump;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        std::uint64_t size = 0;
        if (!get(in, len)) {
            throw IoError("truncated mask dump header");
        }
        std::string name(len, '\0');
        if (!in.read(name.data(), len) || !get(in, size)) {
            throw IoError("truncated mask dump header");
        }
        dump.names.push_back(std::move(name));
        dump.sizes.push_back(size);
    }
    std::uint64_t epoch = 0;
    while (get(in, epoch)) {
        MaskDumpEntry e;
        e.epoch = epoch;
        for (const auto size : dump.sizes) {
            std::vector<char> bits((size + 7) / 8);
            if (!in.read(bits.data(), static_cast<std::streamsize>(bits.size()))) {
                throw IoError("truncated mask dump entry for epoch " + std::to_string(epoch));
            }
            std::vector<std::uint8_t> keep(size);
            for (std::size_t k = 0; k < size; ++k) {
                keep[k] = (static_cast<unsigned char>(bits[k / 8]) >> (k % 8)) & 1U;
            }
            std::vector<double> g(size);
            for (auto& v : g) {
                if (!get(in, v)) {
                    throw IoError("truncated mask dump entry for epoch " + std::to_string(epoch));
                }
            }
            e.mask.push_back(std::move(keep));
            e.grads.push_back(std::move(g));
        }
        dump.entries.push_back(std::move(e));
    }
    return dump;
}

GradStats grad_stats(const MaskDump& dump)
{
    GradStats s;
    s.names = dump.names;
    for (const auto& e : dump.entries) {
        s.epochs.push_back(e.epoch);
        std::vector<double> mag;
        std::vector<double> frac;
        for (std::size_t t = 0; t < dump.sizes.size(); ++t) {
            double acc = 0.0;
            std::size_t ones = 0;
            for (std::size_t k = 0; k < dump.sizes[t]; ++k) {
                acc += std::abs(e.grads[t][k]);
                ones += e.mask[t][k];
            }
            const auto n = static_cast<double>(dump.sizes[t]);
            mag.push_back(acc / n);
            frac.push_back(static_cast<double>(ones) / n);
        }
        s.mean_abs_grad.push_back(std::move(mag));
        s.fraction_updated.push_back(std::move(frac));
    }
    return s;
}

GradStats grad_stats(const std::filesystem::path& dump_path)
{
    return grad_stats(read_mask_dump(dump_path));
}

} // namespace cure
