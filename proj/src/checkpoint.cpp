// Copyright 2026 The CDPAM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "cdpam/model.hpp"

namespace cdpam {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'D', 'P', 'M'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(const std::vector<char>& bytes, std::size_t& pos, const std::string& path) {
  if (bytes.size() - pos < sizeof(T)) throw FormatError("checkpoint: truncated file " + path);
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = model.config();
  header["stage"] = stage_name(model.stage());
  header["seed"] = model.seed();
  header["metadata"] = model.metadata();
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, p] : model.params()) {
    dir.push_back({{"name", name}, {"shape", p.value.shape()}, {"trainable", p.trainable}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + tmp.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, p] : model.params())
      out.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    out.flush();
    if (!out) throw IoError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + name);
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, name);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: format version " + std::to_string(version) + " in " + name +
                       ", expected " + std::to_string(kCheckpointVersion));
  const auto header_len = get<std::uint64_t>(bytes, pos, name);
  if (bytes.size() - pos < header_len) throw FormatError("checkpoint: truncated header in " + name);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: corrupt header in " + name + ": " + e.what());
  }
  pos += header_len;

  Model m;
  try {
    m.config_ = header.at("config").get<ModelConfig>();
    m.config_.validate();
    m.stage_ = stage_from_name(header.at("stage").get<std::string>());
    m.seed_ = header.at("seed").get<std::uint64_t>();
    m.metadata_ = header.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad header field in " + name + ": " + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError("checkpoint: invalid model config in " + name + ": " + e.what());
  }
  m.init_parameters(false);

  const std::size_t payload = pos;
  std::size_t loaded = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto tname = entry.at("name").get<std::string>();
    if (!m.params_.contains(tname)) throw FormatError("checkpoint: unexpected tensor " + tname);
    Parameter& p = m.params_.at(tname);
    if (entry.at("shape").get<Shape>() != p.value.shape())
      throw FormatError("checkpoint: shape mismatch for " + tname);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t nbytes = static_cast<std::size_t>(p.value.size()) * sizeof(double);
    const std::size_t start = payload + offset * sizeof(double);
    if (start > bytes.size() || bytes.size() - start < nbytes)
      throw FormatError("checkpoint: truncated payload for " + tname);
    std::memcpy(p.value.data(), bytes.data() + start, nbytes);
    ++loaded;
  }
  if (loaded != m.params_.size()) throw FormatError("checkpoint: missing tensors in " + name);
  return m;
}

}  // namespace cdpam
