#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmem/backends/backend.hpp"

namespace mmem {

// Append-only log of model dispatches, in the scripted fixture format, so a
// recorded session can be replayed through ScriptedBackend.
class DispatchJournal {
public:
    DispatchJournal() = default;
    explicit DispatchJournal(const std::filesystem::path& path);

    void record_chat(const ChatRequest& request, const std::string& response);
    void record_embedding(std::string_view text, const Vector& vector);

    std::vector<nlohmann::json> records() const;
    std::size_t size() const;

private:
    void append(nlohmann::json record);

    mutable std::mutex mu_;
    std::vector<nlohmann::json> records_;
    std::ofstream out_;
};

class RecordingBackend : public ModelBackend {
public:
    RecordingBackend(std::shared_ptr<ModelBackend> inner, std::shared_ptr<DispatchJournal> journal);

    std::string chat(const ChatRequest& request) override;
    Vector embed_text(std::string_view text) override;
    BackendInfo info() const override;

private:
    std::shared_ptr<ModelBackend> inner_;
    std::shared_ptr<DispatchJournal> journal_;
};

}  // namespace mmem
