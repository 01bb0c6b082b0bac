#include "ctxevo/unit_pool.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ctxevo/errors.hpp"
#include "ctxevo/hash.hpp"

namespace ctxevo {

namespace {

std::string chunker_mode_label(ChunkerConfig::Mode mode) {
  switch (mode) {
    case ChunkerConfig::Mode::WholeFile:
      return "whole_file";
    case ChunkerConfig::Mode::Fixed:
      return "fixed";
    case ChunkerConfig::Mode::Structural:
      return "structural";
  }
  return "whole_file";
}

ChunkerConfig::Mode chunker_mode_from_label(const std::string& label) {
  if (label == "whole_file") return ChunkerConfig::Mode::WholeFile;
  if (label == "fixed") return ChunkerConfig::Mode::Fixed;
  if (label == "structural") return ChunkerConfig::Mode::Structural;
  throw UsageError("unknown chunker mode: " + label);
}

}  // namespace

void ChunkerConfig::validate() const {
  if (mode == Mode::Fixed && overlap >= size) {
    throw UsageError("chunker: overlap must be smaller than size");
  }
  if (mode == Mode::Structural && overlap >= ceiling) {
    throw UsageError("chunker: overlap must be smaller than ceiling");
  }
}

void to_json(nlohmann::json& j, const ChunkerConfig& c) {
  j = nlohmann::json{
      {"mode", chunker_mode_label(c.mode)},
      {"size", c.size},
      {"overlap", c.overlap},
      {"ceiling", c.ceiling},
      {"hint", c.hint == StructureHint::Code ? "code" : "prose"}};
}

void from_json(const nlohmann::json& j, ChunkerConfig& c) {
  c = ChunkerConfig{};
  if (j.contains("mode")) {
    c.mode = chunker_mode_from_label(j.at("mode").get<std::string>());
  }
  if (j.contains("size")) j.at("size").get_to(c.size);
  if (j.contains("overlap")) j.at("overlap").get_to(c.overlap);
  if (j.contains("ceiling")) j.at("ceiling").get_to(c.ceiling);
  if (j.contains("hint")) {
    c.hint = j.at("hint").get<std::string>() == "prose" ? StructureHint::Prose
                                                        : StructureHint::Code;
  }
}

void to_json(nlohmann::json& j, const PoolManifest& m) {
  j = nlohmann::json{{"tokenizer", m.tokenizer},
                     {"unit_kind", m.unit_kind},
                     {"source", m.source},
                     {"chunker", m.chunker},
                     {"skipped", m.skipped}};
}

void from_json(const nlohmann::json& j, PoolManifest& m) {
  m = PoolManifest{};
  if (j.contains("tokenizer")) j.at("tokenizer").get_to(m.tokenizer);
  if (j.contains("unit_kind")) j.at("unit_kind").get_to(m.unit_kind);
  if (j.contains("source")) j.at("source").get_to(m.source);
  if (j.contains("chunker")) j.at("chunker").get_to(m.chunker);
  if (j.contains("skipped")) j.at("skipped").get_to(m.skipped);
}

bool UnitPool::add(ContextUnit unit) {
  if (index_.count(unit.id)) return false;
  index_.emplace(unit.id, units_.size());
  units_.push_back(std::move(unit));
  return true;
}

const ContextUnit* UnitPool::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &units_[it->second];
}

std::string UnitPool::fingerprint() const {
  std::string material;
  for (const auto& unit : units_) {
    material += unit.id;
    material += '\n';
  }
  return sha256_hex(material, 16);
}

void UnitPool::save(const std::filesystem::path& file) const {
  nlohmann::json j{{"manifest", manifest_}, {"units", units_}};
  std::ofstream out(file);
  if (!out) throw RunError("cannot write pool file: " + file.string());
  out << j.dump(2) << '\n';
}

UnitPool UnitPool::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open pool file: " + file.string());
  nlohmann::json j;
  in >> j;

  UnitPool pool(j.at("manifest").get<PoolManifest>());
  for (const auto& item : j.at("units")) {
    if (!pool.add(item.get<ContextUnit>())) {
      throw RunError("pool file has duplicate unit ids: " + file.string());
    }
  }
  return pool;
}

UnitPool ingest_directory(const std::filesystem::path& dir, UnitKind kind,
                          const ChunkerConfig& chunker, const Tokenizer& tok) {
  chunker.validate();
  if (!std::filesystem::is_directory(dir)) {
    throw UsageError("not a directory: " + dir.string());
  }

  std::vector<std::filesystem::path> files;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(dir)) {
    std::error_code ec;
    if (entry.is_regular_file(ec)) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    return a.generic_string() < b.generic_string();
  });

  PoolManifest manifest;
  manifest.tokenizer = tok.name();
  manifest.unit_kind = std::string(unit_kind_label(kind));
  manifest.source = dir.generic_string();
  manifest.chunker = chunker;
  UnitPool pool(manifest);

  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      std::cerr << "warning: skipping unreadable file " << file << '\n';
      pool.manifest().skipped.push_back("unreadable:" + file.generic_string());
      continue;
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    std::vector<ByteRange> ranges;
    switch (chunker.mode) {
      case ChunkerConfig::Mode::WholeFile:
        if (tok.count(text) > 0) ranges.push_back({0, text.size()});
        break;
      case ChunkerConfig::Mode::Fixed:
        ranges = chunk_fixed_ranges(text, chunker.size, chunker.overlap, tok);
        break;
      case ChunkerConfig::Mode::Structural:
        ranges = chunk_structural_ranges(text, chunker.hint, chunker.ceiling,
                                         chunker.overlap, tok);
        break;
    }

    for (const auto& r : ranges) {
      SourceRef ref;
      ref.path = file.generic_string();
      ref.byte_begin = r.begin;
      ref.byte_end = r.end;
      auto unit = ContextUnit::make(
          kind, text.substr(r.begin, r.end - r.begin), std::move(ref), {}, tok);
      if (!pool.add(std::move(unit))) {
        pool.manifest().skipped.push_back(
            "duplicate:" + file.generic_string() + ":" +
            std::to_string(r.begin) + "-" + std::to_string(r.end));
      }
    }
  }

  if (pool.empty()) {
    throw RunError("ingestion produced zero units from " + dir.string());
  }
  return pool;
}

std::vector<TrajectoryRecord> load_trajectories_jsonl(
    const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open trajectories file: " + file.string());
  std::vector<TrajectoryRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(),
                     j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("bad trajectory record at line " +
                       std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

InsightExtraction extract_insights(
    const std::vector<TrajectoryRecord>& trajectories, ChatBackend& extractor,
    const std::string& prompt_template, const std::string& delimiter) {
  InsightExtraction result;

  for (const auto& record : trajectories) {
    std::string prompt = prompt_template;
    const std::string placeholder = "{{trajectory}}";
    if (const auto pos = prompt.find(placeholder); pos != std::string::npos) {
      prompt.replace(pos, placeholder.size(), record.text);
    } else {
      prompt += "\n\n" + record.text;
    }

    std::string response;
    try {
      response = extractor.complete({{"user", prompt}}).response_text;
    } catch (const BackendError& e) {
      result.failures.push_back(record.id + ": " + e.what());
      continue;
    }

    // Split on delimiter lines into atomic insights.
    std::vector<std::string> blocks;
    std::string current;
    std::istringstream lines(response);
    std::string line;
    while (std::getline(lines, line)) {
      std::string trimmed = line;
      while (!trimmed.empty() &&
             (trimmed.back() == '\r' || trimmed.back() == ' ')) {
        trimmed.pop_back();
      }
      if (trimmed == delimiter) {
        blocks.push_back(current);
        current.clear();
      } else {
        if (!current.empty()) current += '\n';
        current += line;
      }
    }
    blocks.push_back(current);

    std::size_t produced = 0;
    for (auto& block : blocks) {
      const auto first = block.find_first_not_of(" \t\r\n");
      if (first == std::string::npos) continue;
      const auto last = block.find_last_not_of(" \t\r\n");
      std::string text = block.substr(first, last - first + 1);

      SourceRef ref;
      ref.note = "trajectory:" + record.id + ";extractor:" + extractor.id();
      result.units.push_back(
          ContextUnit::make(UnitKind::Insight, std::move(text), ref));
      ++produced;
    }
    if (produced == 0) {
      result.warnings.push_back("empty extraction for trajectory " +
                                record.id);
    }
  }
  return result;
}

}  // namespace ctxevo
