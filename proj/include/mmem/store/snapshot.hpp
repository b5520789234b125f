#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mmem/agent/agent.hpp"
#include "mmem/memories.hpp"

namespace mmem {

inline constexpr int kSnapshotFormatVersion = 1;

// Snapshot directory layout (all text, one JSON record per line):
//   MANIFEST.json                     format, version, digest algorithm, per-file digests, overall digest
//   config.json                       timescales and which memories exist
//   episodic/scale-<ms>.segments.jsonl
//   episodic/scale-<ms>.triplets.jsonl
//   semantic/journal.jsonl            one consolidation record per line
//   semantic/graph.jsonl              current edges, cross-checked against journal replay
//   visual/features.jsonl             base64 little-endian doubles
//   visual/frames.jsonl
//
// save() writes a sibling temp directory and renames it into place; the
// previous snapshot survives any failure before the final rename.
// Returns the overall digest.
std::string save_snapshot(const Memories& memories, const std::filesystem::path& path);

// Verifies every digest, re-validates all memories and checks the semantic
// graph against its journal. Throws DigestMismatch on corruption,
// UnsupportedVersion on an unknown format version, Io if unreadable.
Memories load_snapshot(const std::filesystem::path& path);

// The overall digest recorded in the manifest (no payload verification).
std::string snapshot_digest(const std::filesystem::path& path);

// Record encodings shared with other tools.
nlohmann::json triplet_to_json(const Triplet& t);
Triplet triplet_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const ConsolidationRecord& r);
ConsolidationRecord record_from_json(const nlohmann::json& j);

// One trace per file, written atomically.
void save_trace(const AgentTrace& trace, const std::filesystem::path& path);
AgentTrace load_trace(const std::filesystem::path& path);

// Atomic whole-file write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace mmem
