// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "smt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "smt/rng.hpp"

namespace smt::checkpoint {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "SMTCKPT1";
constexpr std::size_t kMagicLen = 8;

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw Error("CorruptCheckpoint", path.string() + ": " + why);
}

void append_matrix(std::string& out, const Mat<float>& m) {
  out.append(reinterpret_cast<const char*>(m.data()),
             sizeof(float) * static_cast<std::size_t>(m.size()));
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Parsed {
  json header;
  std::string payload;
};

Parsed parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) corrupt(path, "cannot open checkpoint");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kMagic) != 0)
    corrupt(path, "not a checkpoint archive");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + kMagicLen, 8);
  if (header_len > bytes.size() - kMagicLen - 8) corrupt(path, "truncated header");
  Parsed p;
  try {
    p.header = json::parse(bytes.substr(kMagicLen + 8, header_len));
  } catch (const json::exception&) {
    corrupt(path, "unreadable header");
  }
  p.payload = bytes.substr(kMagicLen + 8 + header_len);
  try {
    if (p.payload.size() != p.header.at("payload_bytes").get<std::size_t>())
      corrupt(path, "payload size mismatch");
    if (hex64(fnv1a64(p.payload)) != p.header.at("checksum").get<std::string>())
      corrupt(path, "checksum mismatch");
  } catch (const json::exception&) {
    corrupt(path, "incomplete header");
  }
  return p;
}

Metadata metadata_from(const json& h) {
  Metadata m;
  m.vocab_hash = h.at("vocab_hash").get<std::string>();
  m.step = h.at("step").get<std::int64_t>();
  for (const auto& [k, v] : h.at("values").items()) m.values.emplace_back(k, v.get<double>());
  return m;
}

}  // namespace

double Metadata::value(const std::string& key, double fallback) const {
  for (const auto& [k, v] : values)
    if (k == key) return v;
  return fallback;
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IO", "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("IO", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save(const std::filesystem::path& path, const model::SmtModel<float>& model,
          const Metadata& meta, const OptimizerState* optimizer) {
  const auto& ps = model.params();
  std::string payload;
  payload.reserve(sizeof(float) * ps.num_scalars() * (optimizer ? 3 : 1));
  json shapes = json::array();
  for (int i = 0; i < ps.size(); ++i) {
    shapes.push_back({{"name", ps.name(i)}, {"rows", ps.value(i).rows()}, {"cols", ps.value(i).cols()}});
    append_matrix(payload, ps.value(i));
  }
  if (optimizer) {
    if (static_cast<int>(optimizer->m.size()) != ps.size() ||
        static_cast<int>(optimizer->v.size()) != ps.size())
      throw Error("InvalidArgument", "optimizer state does not match parameters");
    for (const auto& m : optimizer->m) append_matrix(payload, m);
    for (const auto& v : optimizer->v) append_matrix(payload, v);
  }
  json values = json::object();
  for (const auto& [k, v] : meta.values) values[k] = v;
  json header;
  header["format"] = 1;
  header["config"] = json::parse(model.config().to_json());
  header["vocab_hash"] = meta.vocab_hash;
  header["step"] = meta.step;
  header["values"] = values;
  header["params"] = shapes;
  header["optimizer"] = optimizer != nullptr;
  header["optimizer_step"] = optimizer ? optimizer->step : 0;
  header["payload_bytes"] = payload.size();
  header["checksum"] = hex64(fnv1a64(payload));
  const std::string head = header.dump();

  std::string bytes(kMagic, kMagicLen);
  const std::uint64_t len = head.size();
  bytes.append(reinterpret_cast<const char*>(&len), 8);
  bytes += head;
  bytes += payload;
  atomic_write(path, bytes);
}

Loaded load(const std::filesystem::path& path, const std::string& expected_vocab_hash) {
  if (!std::filesystem::exists(path)) corrupt(path, "no such file");
  Parsed p = parse_file(path);
  try {
    Metadata meta = metadata_from(p.header);
    if (!expected_vocab_hash.empty() && expected_vocab_hash != meta.vocab_hash)
      throw Error("VocabularyMismatch", "checkpoint vocabulary " + meta.vocab_hash +
                                            " does not match supplied vocabulary " +
                                            expected_vocab_hash);
    auto cfg = model::ModelConfig::from_json(p.header.at("config").dump());
    Loaded out{model::SmtModel<float>(cfg, 0), std::move(meta), false, {}};
    auto& ps = out.model.params();
    const auto& shapes = p.header.at("params");
    if (static_cast<int>(shapes.size()) != ps.size()) corrupt(path, "parameter count mismatch");
    std::size_t offset = 0;
    auto take = [&](Mat<float>& m) {
      const std::size_t n = sizeof(float) * static_cast<std::size_t>(m.size());
      if (offset + n > p.payload.size()) corrupt(path, "payload too short");
      std::memcpy(m.data(), p.payload.data() + offset, n);
      offset += n;
    };
    for (int i = 0; i < ps.size(); ++i) {
      const auto& s = shapes[static_cast<std::size_t>(i)];
      if (s.at("name").get<std::string>() != ps.name(i) || s.at("rows").get<long>() != ps.value(i).rows() ||
          s.at("cols").get<long>() != ps.value(i).cols())
        corrupt(path, "parameter layout mismatch at " + ps.name(i));
      take(ps.value(i));
    }
    if (p.header.at("optimizer").get<bool>()) {
      out.has_optimizer = true;
      out.optimizer.step = p.header.at("optimizer_step").get<std::int64_t>();
      for (auto* moments : {&out.optimizer.m, &out.optimizer.v})
        for (int i = 0; i < ps.size(); ++i) {
          moments->emplace_back(ps.value(i).rows(), ps.value(i).cols());
          take(moments->back());
        }
    }
    if (offset != p.payload.size()) corrupt(path, "trailing payload bytes");
    return out;
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }
}

Metadata read_metadata(const std::filesystem::path& path, model::ModelConfig* config) {
  if (!std::filesystem::exists(path)) corrupt(path, "no such file");
  Parsed p = parse_file(path);
  try {
    if (config) *config = model::ModelConfig::from_json(p.header.at("config").dump());
    return metadata_from(p.header);
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }
}

}  // namespace smt::checkpoint
