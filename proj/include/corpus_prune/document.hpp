#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "corpus_prune/error.hpp"

namespace corpus_prune {

using Json = nlohmann::ordered_json;

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> subset;
  // Keys other than id/text/subset, kept in input order for round trips.
  Json extra = Json::object();

  std::size_t byte_len() const noexcept { return text.size(); }

  friend bool operator==(const Document&, const Document&) = default;
};

// Parses one JSONL record. Errors carry only the local reason; callers add
// file and line context.
inline Document parse_document(std::string_view line) {
  Json obj;
  try {
    obj = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw Error(ErrorKind::parse, "record is not a JSON object");
  Document doc;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto& key = it.key();
    if (key == "id") {
      if (!it->is_string()) throw Error(ErrorKind::parse, "\"id\" must be a string");
      doc.id = it->get<std::string>();
    } else if (key == "text") {
      if (!it->is_string()) throw Error(ErrorKind::parse, "\"text\" must be a string");
      doc.text = it->get<std::string>();
    } else if (key == "subset") {
      if (it->is_null()) continue;
      if (!it->is_string()) throw Error(ErrorKind::parse, "\"subset\" must be a string");
      doc.subset = it->get<std::string>();
    } else {
      doc.extra[key] = *it;
    }
  }
  if (!obj.contains("id")) throw Error(ErrorKind::parse, "missing \"id\"");
  if (!obj.contains("text")) throw Error(ErrorKind::parse, "missing \"text\"");
  if (doc.id.empty()) throw Error(ErrorKind::parse, "empty \"id\"");
  return doc;
}

inline Json document_to_json(const Document& doc) {
  Json obj = Json::object();
  obj["id"] = doc.id;
  obj["text"] = doc.text;
  if (doc.subset) obj["subset"] = *doc.subset;
  for (auto it = doc.extra.begin(); it != doc.extra.end(); ++it) obj[it.key()] = *it;
  return obj;
}

inline std::string serialize_document(const Document& doc) {
  return document_to_json(doc).dump();
}

}  // namespace corpus_prune
