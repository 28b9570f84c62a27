#pragma once

#include <filesystem>
#include <optional>

#include "recall/optimizer.hpp"
#include "recall/parser.hpp"

namespace recall {

struct Checkpoint {
  ParserModel model;
  std::optional<Adam> optimizer;
};

/// Writes config, vocabulary, partition tags, every tensor and (optionally)
/// the optimizer state as JSON. Doubles round-trip exactly.
void save_checkpoint(const std::filesystem::path& path, const ParserModel& model, const Adam* optimizer = nullptr);

/// Throws MalformedRecord on an unreadable or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace recall
