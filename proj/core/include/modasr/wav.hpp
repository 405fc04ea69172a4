// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace modasr {

struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};

// Mono 16-bit PCM.
void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate);

// Mono 16-bit PCM or 32-bit IEEE float. Multi-channel files are rejected.
WavData read_wav(const std::filesystem::path& path);

}  // namespace modasr
