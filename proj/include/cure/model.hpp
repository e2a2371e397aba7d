#ifndef CURE_MODEL_HPP
#define CURE_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cure/tensor.hpp"

namespace cure {

/// Layer widths of a block-structured MLP. `blocks[b]` lists the output
/// width of every dense layer inside block b.
struct ArchSpec {
    std::size_t input_dim{2};
    std::vector<std::vector<std::size_t>> blocks;
    std::size_t num_classes{2};

    static ArchSpec uniform(std::size_t input_dim, std::size_t num_blocks, std::vector<std::size_t> widths,
                            std::size_t num_classes);

    [[nodiscard]] std::size_t num_blocks() const noexcept { return blocks.size(); }
    void validate() const;
    bool operator==(const ArchSpec&) const = default;
};

/// Anything that maps a [batch x features] input to [batch x classes] logits.
/// Attacks and evaluation only need this much of a model.
class Classifier {
public:
    virtual ~Classifier() = default;
    [[nodiscard]] virtual Tensor logits(const Tensor& x) const = 0;
    [[nodiscard]] virtual std::vector<Tensor> parameters() const = 0;
};

/// Row-wise argmax of the logits (lowest index wins ties), computed without
/// recording a graph.
[[nodiscard]] std::vector<int> predict(const Classifier& model, const Tensor& x);

struct Dense {
    Tensor weight; // [out x in]
    Tensor bias;   // [out]
};

/// Dense blocks with relu after every hidden layer, followed by a linear
/// classifier head. Block numbers in the public API are 1-based (U-1 .. U-B);
/// the classifier has trainability index B.
class BlockModel : public Classifier {
public:
    static BlockModel init(const ArchSpec& arch, std::uint64_t seed);

    BlockModel(const BlockModel& other);
    BlockModel& operator=(const BlockModel& other);
    BlockModel(BlockModel&&) noexcept = default;
    BlockModel& operator=(BlockModel&&) noexcept = default;
    ~BlockModel() override = default;

    [[nodiscard]] Tensor logits(const Tensor& x) const override;
    /// Post-block activations, one [batch x width] tensor per block.
    [[nodiscard]] std::vector<Tensor> block_outputs(const Tensor& x) const;

    /// Flat parameter order: block 1 layer 1 weight, bias, ..., classifier weight, bias.
    [[nodiscard]] std::vector<Tensor> parameters() const override;
    [[nodiscard]] std::vector<std::string> parameter_names() const;
    /// Trainability index (0..B) of each entry of parameters().
    [[nodiscard]] std::vector<std::size_t> parameter_groups() const;
    [[nodiscard]] std::size_t parameter_count() const;

    [[nodiscard]] const ArchSpec& arch() const noexcept { return arch_; }
    [[nodiscard]] std::size_t num_blocks() const noexcept { return arch_.num_blocks(); }

    [[nodiscard]] const std::vector<bool>& block_trainable() const noexcept { return trainable_; }
    void set_trainable(std::size_t group, bool flag);
    void set_all_trainable(bool flag);

    /// Switch every parameter in or out of graph recording.
    void set_requires_grad(bool flag);
    void zero_grads();
    /// Overwrite parameter values (not flags) with those of a same-shaped model.
    void copy_values_from(const BlockModel& other);

    [[nodiscard]] std::vector<Dense>& block(std::size_t index) { return blocks_.at(index); }
    [[nodiscard]] const std::vector<Dense>& block(std::size_t index) const { return blocks_.at(index); }
    [[nodiscard]] Dense& classifier() noexcept { return classifier_; }
    [[nodiscard]] const Dense& classifier() const noexcept { return classifier_; }

private:
    BlockModel() = default;
    void draw_block(std::size_t index, std::uint64_t seed);

    ArchSpec arch_;
    std::vector<std::vector<Dense>> blocks_;
    Dense classifier_;
    std::vector<bool> trainable_;

    friend BlockModel reinit_blocks(const BlockModel&, const std::set<std::size_t>&, std::uint64_t);
};

/// Copy of `model` whose listed blocks (1-based) are redrawn exactly as
/// init() would draw them under `seed`; every other tensor is bit-identical.
[[nodiscard]] BlockModel reinit_blocks(const BlockModel& model, const std::set<std::size_t>& blocks,
                                       std::uint64_t seed);

/// Per-parameter 0/1 selector of gradient entries allowed to update.
struct GradMask {
    std::vector<std::vector<std::uint8_t>> keep;
    std::size_t epoch{0};

    [[nodiscard]] double fraction_kept(std::size_t tensor) const;
    [[nodiscard]] std::size_t zero_count(std::size_t tensor) const;
};

struct OptimizerState {
    double learning_rate{0.02};
    double momentum{0.9};
    double weight_decay{5e-4};
    std::vector<std::vector<double>> velocity;

    static OptimizerState for_model(const BlockModel& model, double learning_rate, double momentum,
                                    double weight_decay);
    void reset();
};

/// SGD with momentum and weight decay. Entries whose mask is 0 keep both
/// value and velocity; they only shrink by the decay term lr*wd*p. Blocks
/// flagged non-trainable are skipped. All gradients are cleared afterwards.
void sgd_step(BlockModel& model, OptimizerState& opt, const GradMask* mask = nullptr);

} // namespace cure

#endif // CURE_MODEL_HPP
