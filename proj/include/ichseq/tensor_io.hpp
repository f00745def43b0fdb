#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ichseq/tensor.hpp"

namespace ichseq::io {

// Named-tensor archive: "ICHTNSR1", u64 count, then per tensor
// u32 name length, name bytes, u32 rank, u64 dims, f64 values. All little endian.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& tensors);
NamedTensors read_tensors(std::istream& in);

void save_tensor_archive(const std::filesystem::path& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors);
NamedTensors load_tensor_archive(const std::filesystem::path& path);

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a partially written file.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ichseq::io
