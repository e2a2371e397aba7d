#include "cure/model.hpp"

#include <cmath>

#include "cure/error.hpp"
#include "cure/random.hpp"

namespace cure {
namespace {

std::string layer_name(std::size_t block, std::size_t layer)
{
    return "block" + std::to_string(block + 1) + ".layer" + std::to_string(layer + 1);
}

Dense draw_dense(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name)
{
    Rng rng(seed, name + ".weight");
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(out * in);
    for (auto& v : w) {
        v = rng.uniform(-bound, bound);
    }
    return Dense{Tensor::from({out, in}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor apply_dense(const Dense& layer, const Tensor& x)
{
    return add(matmul(x, transpose(layer.weight)), layer.bias);
}

Dense clone_dense(const Dense& d)
{
    return Dense{d.weight.clone(d.weight.requires_grad()), d.bias.clone(d.bias.requires_grad())};
}

} // namespace

std::vector<int> predict(const Classifier& model, const Tensor& x)
{
    NoGradGuard guard;
    const Tensor z = model.logits(x);
    const std::size_t rows = z.dim(0);
    const std::size_t cols = z.dim(1);
    const auto v = z.data();
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            if (v[r * cols + c] > v[r * cols + best]) {
                best = c;
            }
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

ArchSpec ArchSpec::uniform(std::size_t input_dim, std::size_t num_blocks, std::vector<std::size_t> widths,
                           std::size_t num_classes)
{
    ArchSpec spec;
    spec.input_dim = input_dim;
    spec.blocks.assign(num_blocks, widths);
    spec.num_classes = num_classes;
    return spec;
}

void ArchSpec::validate() const
{
    if (input_dim == 0) {
        throw InvalidArgument("architecture: input_dim must be positive");
    }
    if (num_classes == 0) {
        throw InvalidArgument("architecture: num_classes must be positive");
    }
    if (blocks.empty()) {
        throw InvalidArgument("architecture: at least one block is required");
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].empty()) {
            throw InvalidArgument("architecture: block " + std::to_string(b + 1) + " has no layers");
        }
        for (const auto w : blocks[b]) {
            if (w == 0) {
                throw InvalidArgument("architecture: zero width in block " + std::to_string(b + 1));
            }
        }
    }
}

BlockModel BlockModel::init(const ArchSpec& arch, std::uint64_t seed)
{
    arch.validate();
    BlockModel m;
    m.arch_ = arch;
    m.blocks_.resize(arch.num_blocks());
    for (std::size_t b = 0; b < arch.num_blocks(); ++b) {
        m.draw_block(b, seed);
    }
    const std::size_t last = arch.blocks.back().back();
    m.classifier_ = draw_dense(last, arch.num_classes, seed, "classifier");
    m.trainable_.assign(arch.num_blocks() + 1, true);
    return m;
}

void BlockModel::draw_block(std::size_t index, std::uint64_t seed)
{
    std::size_t in = index == 0 ? arch_.input_dim : arch_.blocks[index - 1].back();
    auto& layers = blocks_[index];
    layers.clear();
    for (std::size_t l = 0; l < arch_.blocks[index].size(); ++l) {
        const std::size_t out = arch_.blocks[index][l];
        layers.push_back(draw_dense(in, out, seed, layer_name(index, l)));
        in = out;
    }
}

BlockModel::BlockModel(const BlockModel& other)
    : arch_(other.arch_), classifier_(clone_dense(other.classifier_)), trainable_(other.trainable_)
{
    blocks_.reserve(other.blocks_.size());
    for (const auto& blk : other.blocks_) {
        auto& dst = blocks_.emplace_back();
        for (const auto& layer : blk) {
            dst.push_back(clone_dense(layer));
        }
    }
}

BlockModel& BlockModel::operator=(const BlockModel& other)
{
    if (this != &other) {
        BlockModel copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Tensor BlockModel::logits(const Tensor& x) const
{
    if (x.rank() != 2 || x.dim(1) != arch_.input_dim) {
        throw ShapeError("model expects input [batch x " + std::to_string(arch_.input_dim) + "], got " +
                         shape_string(x.shape()));
    }
    Tensor h = x;
    for (const auto& blk : blocks_) {
        for (const auto& layer : blk) {
            h = relu(apply_dense(layer, h));
        }
    }
    return apply_dense(classifier_, h);
}

std::vector<Tensor> BlockModel::block_outputs(const Tensor& x) const
{
    if (x.rank() != 2 || x.dim(1) != arch_.input_dim) {
        throw ShapeError("model expects input [batch x " + std::to_string(arch_.input_dim) + "], got " +
                         shape_string(x.shape()));
    }
    std::vector<Tensor> out;
    Tensor h = x;
    for (const auto& blk : blocks_) {
        for (const auto& layer : blk) {
            h = relu(apply_dense(layer, h));
        }
        out.push_back(h);
    }
    return out;
}

std::vector<Tensor> BlockModel::parameters() const
{
    std::vector<Tensor> out;
    for (const auto& blk : blocks_) {
        for (const auto& layer : blk) {
            out.push_back(layer.weight);
            out.push_back(layer.bias);
        }
    }
    out.push_back(classifier_.weight);
    out.push_back(classifier_.bias);
    return out;
}

std::vector<std::string> BlockModel::parameter_names() const
{
    std::vector<std::string> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
            out.push_back(layer_name(b, l) + ".weight");
            out.push_back(layer_name(b, l) + ".bias");
        }
    }
    out.emplace_back("classifier.weight");
    out.emplace_back("classifier.bias");
    return out;
}

std::vector<std::size_t> BlockModel::parameter_groups() const
{
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        out.insert(out.end(), 2 * blocks_[b].size(), b);
    }
    out.insert(out.end(), 2, blocks_.size());
    return out;
}

std::size_t BlockModel::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : parameters()) {
        n += p.size();
    }
    return n;
}

void BlockModel::set_trainable(std::size_t group, bool flag)
{
    if (group >= trainable_.size()) {
        throw InvalidArgument("trainability index " + std::to_string(group) + " out of range");
    }
    trainable_[group] = flag;
}

void BlockModel::set_all_trainable(bool flag) { trainable_.assign(trainable_.size(), flag); }

void BlockModel::set_requires_grad(bool flag)
{
    for (auto p : parameters()) {
        p.set_requires_grad(flag);
    }
}

void BlockModel::zero_grads()
{
    for (auto p : parameters()) {
        p.zero_grad();
    }
}

void BlockModel::copy_values_from(const BlockModel& other)
{
    if (!(arch_ == other.arch_)) {
        throw ShapeError("copy_values_from: architecture mismatch");
    }
    auto dst = parameters();
    const auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const auto s = src[i].data();
        auto d = dst[i].mutable_data();
        std::copy(s.begin(), s.end(), d.begin());
    }
}

BlockModel reinit_blocks(const BlockModel& model, const std::set<std::size_t>& blocks, std::uint64_t seed)
{
    for (const auto b : blocks) {
        if (b < 1 || b > model.num_blocks()) {
            throw InvalidArgument("reinit_blocks: block " + std::to_string(b) + " outside 1.." +
                                  std::to_string(model.num_blocks()));
        }
    }
    BlockModel out(model);
    for (const auto b : blocks) {
        out.draw_block(b - 1, seed);
    }
    return out;
}

// ---------------------------------------------------------------------------

double GradMask::fraction_kept(std::size_t tensor) const
{
    const auto& k = keep.at(tensor);
    return static_cast<double>(k.size() - zero_count(tensor)) / static_cast<double>(k.size());
}

std::size_t GradMask::zero_count(std::size_t tensor) const
{
    std::size_t zeros = 0;
    for (const auto v : keep.at(tensor)) {
        zeros += v == 0 ? 1 : 0;
    }
    return zeros;
}

OptimizerState OptimizerState::for_model(const BlockModel& model, double learning_rate, double momentum,
                                         double weight_decay)
{
    if (!(learning_rate >= 0.0)) {
        throw InvalidArgument("learning rate must be non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw InvalidArgument("momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw InvalidArgument("weight decay must be non-negative");
    }
    OptimizerState s;
    s.learning_rate = learning_rate;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    for (const auto& p : model.parameters()) {
        s.velocity.emplace_back(p.size(), 0.0);
    }
    return s;
}

void OptimizerState::reset()
{
    for (auto& v : velocity) {
        std::fill(v.begin(), v.end(), 0.0);
    }
}

void sgd_step(BlockModel& model, OptimizerState& opt, const GradMask* mask)
{
    auto params = model.parameters();
    const auto groups = model.parameter_groups();
    const auto names = model.parameter_names();
    if (opt.velocity.size() != params.size()) {
        throw ShapeError("optimizer state has " + std::to_string(opt.velocity.size()) + " velocity tensors for " +
                         std::to_string(params.size()) + " parameters");
    }
    if (mask != nullptr && mask->keep.size() != params.size()) {
        throw ShapeError("gradient mask covers " + std::to_string(mask->keep.size()) + " tensors, model has " +
                         std::to_string(params.size()));
    }
    const double lr = opt.learning_rate;
    const double mom = opt.momentum;
    const double wd = opt.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!model.block_trainable()[groups[i]]) {
            continue;
        }
        if (!params[i].has_grad()) {
            throw GraphError("sgd_step: missing gradient for trainable parameter " + names[i]);
        }
        auto& v = opt.velocity[i];
        if (v.size() != params[i].size()) {
            throw ShapeError("velocity for " + names[i] + " has the wrong size");
        }
        const std::uint8_t* keep = nullptr;
        if (mask != nullptr) {
            if (mask->keep[i].size() != params[i].size()) {
                throw ShapeError("gradient mask for " + names[i] + " has the wrong size");
            }
            keep = mask->keep[i].data();
        }
        const auto g = params[i].grad();
        auto p = params[i].mutable_data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (keep != nullptr && keep[k] == 0) {
                if (wd != 0.0) {
                    p[k] -= lr * (wd * p[k]);
                }
                continue;
            }
            const double step = g[k] + wd * p[k];
            v[k] = mom * v[k] + step;
            p[k] -= lr * v[k];
        }
        for (const double x : p) {
            if (!std::isfinite(x)) {
                throw NumericError("sgd_step produced a non-finite value in " + names[i]);
            }
        }
    }
    model.zero_grads();
}

} // namespace cure
