// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/architecture.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace revvolnet {

namespace {

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw std::invalid_argument("architecture field '" + field + "': " + why);
}

void require_positive(const std::string& field, std::int64_t value) {
  if (value <= 0) reject(field, "must be positive, got " + std::to_string(value));
}

void require_odd_kernel(const std::string& field, std::int64_t value) {
  require_positive(field, value);
  if (value % 2 == 0) reject(field, "kernel size must be odd, got " + std::to_string(value));
}

const std::vector<std::string> kKeys = {
    "levels",      "encoder_blocks", "decoder_blocks",   "reversible",
    "in_channels", "out_regions",    "kernel_size",      "group_size",
    "stem_kernel_size", "head_kernel_size"};

}  // namespace

void ArchitectureSpec::validate() const {
  if (levels.size() < 2) {
    reject("levels", "need at least 2 resolution levels, got " + std::to_string(levels.size()));
  }
  if (encoder_blocks < 0) reject("encoder_blocks", "must not be negative");
  if (decoder_blocks < 0) reject("decoder_blocks", "must not be negative");
  if (!reversible && (encoder_blocks < 1 || decoder_blocks < 1)) {
    reject(encoder_blocks < 1 ? "encoder_blocks" : "decoder_blocks",
           "a non-reversible network needs at least one block per level");
  }
  require_positive("in_channels", in_channels);
  require_positive("out_regions", out_regions);
  require_odd_kernel("kernel_size", kernel_size);
  require_odd_kernel("stem_kernel_size", stem_kernel_size);
  require_odd_kernel("head_kernel_size", head_kernel_size);
  require_positive("group_size", group_size);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::string where = "width " + std::to_string(levels[i]) + " at level " +
                              std::to_string(i);
    if (levels[i] <= 0) reject("levels", where + " must be positive");
    if (reversible) {
      if (levels[i] % 2 != 0) reject("levels", where + " must be even for reversible splitting");
      if ((levels[i] / 2) % group_size != 0) {
        reject("levels", where + ": half width not divisible by group_size " +
                             std::to_string(group_size));
      }
    } else if (levels[i] % group_size != 0) {
      reject("levels", where + " not divisible by group_size " + std::to_string(group_size));
    }
  }
}

std::int64_t ArchitectureSpec::spatial_divisor() const {
  return levels.empty() ? 1 : std::int64_t{1} << (levels.size() - 1);
}

ArchitectureSpec ArchitectureSpec::from_key_values(const KeyValues& kv) {
  kv.reject_unknown(kKeys);
  ArchitectureSpec spec;
  spec.levels = kv.get_int_list("levels");
  if (kv.has("encoder_blocks")) spec.encoder_blocks = kv.get_int("encoder_blocks");
  if (kv.has("decoder_blocks")) spec.decoder_blocks = kv.get_int("decoder_blocks");
  if (kv.has("reversible")) spec.reversible = kv.get_bool("reversible");
  if (kv.has("in_channels")) spec.in_channels = kv.get_int("in_channels");
  if (kv.has("out_regions")) spec.out_regions = kv.get_int("out_regions");
  if (kv.has("kernel_size")) spec.kernel_size = kv.get_int("kernel_size");
  if (kv.has("group_size")) spec.group_size = kv.get_int("group_size");
  if (kv.has("stem_kernel_size")) spec.stem_kernel_size = kv.get_int("stem_kernel_size");
  if (kv.has("head_kernel_size")) spec.head_kernel_size = kv.get_int("head_kernel_size");
  spec.validate();
  return spec;
}

ArchitectureSpec ArchitectureSpec::parse(const std::string& text) {
  return from_key_values(KeyValues::parse(text));
}

ArchitectureSpec ArchitectureSpec::load(const std::string& path) {
  return from_key_values(KeyValues::load(path));
}

std::string ArchitectureSpec::to_text() const {
  std::ostringstream out;
  out << "levels = " << join_ints(levels) << '\n'
      << "encoder_blocks = " << encoder_blocks << '\n'
      << "decoder_blocks = " << decoder_blocks << '\n'
      << "reversible = " << (reversible ? "true" : "false") << '\n'
      << "in_channels = " << in_channels << '\n'
      << "out_regions = " << out_regions << '\n'
      << "kernel_size = " << kernel_size << '\n'
      << "group_size = " << group_size << '\n'
      << "stem_kernel_size = " << stem_kernel_size << '\n'
      << "head_kernel_size = " << head_kernel_size << '\n';
  return out.str();
}

void ArchitectureSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_text();
}

ArchitectureSpec baseline_spec() {
  ArchitectureSpec spec;
  spec.levels = {30, 60, 120, 240, 480};
  spec.reversible = false;
  return spec;
}

ArchitectureSpec reversible_spec(std::int64_t encoder_blocks, std::int64_t decoder_blocks) {
  ArchitectureSpec spec;
  spec.levels = {60, 120, 240, 360, 480};
  spec.encoder_blocks = encoder_blocks;
  spec.decoder_blocks = decoder_blocks;
  spec.reversible = true;
  return spec;
}

}  // namespace revvolnet
