#ifndef CURE_CHECKPOINT_HPP
#define CURE_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>

#include "cure/model.hpp"

namespace cure {

// On-disk layout, all integers little-endian:
//   "CURECKPT" | u32 version | u64 descriptor length | descriptor (UTF-8 JSON)
//   | f64 payload, one entry per parameter scalar in descriptor order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    BlockModel model;
    std::int64_t epoch{0};
    std::uint64_t seed{0};
};

void save_checkpoint(const std::filesystem::path& path, const BlockModel& model, std::int64_t epoch,
                     std::uint64_t seed);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace cure

#endif // CURE_CHECKPOINT_HPP
