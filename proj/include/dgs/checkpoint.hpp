#pragma once

#include <filesystem>

#include "dgs/gaussian_field.hpp"
#include "dgs/motion_field.hpp"

namespace dgs {

// Canonical-field checkpoint: `<base>.json` manifest plus `<base>.bin`, a
// little-endian float32 blob of per-primitive records in declared field order
// (center, scale_raw, rotation_wxyz, opacity_raw, features).
void save_gaussian_set(const std::filesystem::path& base, const GaussianSet<float>& set);
GaussianSet<float> load_gaussian_set(const std::filesystem::path& base);

// Motion-field checkpoint: `<base>.json` manifest (version, config, tensor
// table) plus `<base>.bin` holding one float32 blob per tensor at the recorded
// offsets.
void save_motion_field(const std::filesystem::path& base, const MotionFieldBranch<float>& branch,
                       const Aabb<float>& bbox);
MotionFieldBranch<float> load_motion_field(const std::filesystem::path& base,
                                           Aabb<float>* bbox_out = nullptr);

template <class S>
void save_gaussian_set_as(const std::filesystem::path& base, const GaussianSet<S>& set) {
  if constexpr (std::is_same_v<S, float>)
    save_gaussian_set(base, set);
  else
    save_gaussian_set(base, set.template cast<float>());
}

}  // namespace dgs
