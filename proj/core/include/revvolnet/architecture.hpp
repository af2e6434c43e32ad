// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revvolnet/config.hpp"

namespace revvolnet {

/// Declarative U-Net description.
///
/// `levels` holds the channel width per resolution level. For reversible
/// networks this is the full width of each level's sequences, so F and G see
/// half of it. `group_size` is the number of channels per normalization group.
struct ArchitectureSpec {
  std::vector<std::int64_t> levels;
  std::int64_t encoder_blocks = 1;
  std::int64_t decoder_blocks = 1;
  bool reversible = true;
  std::int64_t in_channels = 4;
  std::int64_t out_regions = 3;
  std::int64_t kernel_size = 3;
  std::int64_t group_size = 10;
  std::int64_t stem_kernel_size = 1;
  std::int64_t head_kernel_size = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// 2^(levels - 1): every input extent must be a multiple of this.
  std::int64_t spatial_divisor() const;

  static ArchitectureSpec from_key_values(const KeyValues& kv);
  static ArchitectureSpec parse(const std::string& text);
  static ArchitectureSpec load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Widths [30, 60, 120, 240, 480] with conventional double-conv levels.
ArchitectureSpec baseline_spec();
/// Partially reversible counterpart with a comparable parameter budget.
ArchitectureSpec reversible_spec(std::int64_t encoder_blocks = 1, std::int64_t decoder_blocks = 1);

}  // namespace revvolnet
