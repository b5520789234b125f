#include "mmem/backends/recording.hpp"

#include "mmem/error.hpp"

namespace mmem {

DispatchJournal::DispatchJournal(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error(ErrorCode::Io, "cannot open dispatch journal " + path.string());
}

void DispatchJournal::append(nlohmann::json record) {
    std::lock_guard lock(mu_);
    if (out_.is_open()) {
        out_ << record.dump() << '\n';
        out_.flush();
    }
    records_.push_back(std::move(record));
}

void DispatchJournal::record_chat(const ChatRequest& request, const std::string& response) {
    auto frames = nlohmann::json::array();
    for (const auto& f : request.frames) frames.push_back({{"t", f.timestamp_ms}, {"locator", f.locator}});
    append({{"type", "chat"},
            {"template", request.template_id},
            {"digest", request_digest(request.template_id, request.inputs, request.frames)},
            {"inputs", request.inputs},
            {"frames", frames},
            {"response", response}});
}

void DispatchJournal::record_embedding(std::string_view text, const Vector& vector) {
    append({{"type", "embed"}, {"text", text}, {"vector", vector}});
}

std::vector<nlohmann::json> DispatchJournal::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::size_t DispatchJournal::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

RecordingBackend::RecordingBackend(std::shared_ptr<ModelBackend> inner,
                                   std::shared_ptr<DispatchJournal> journal)
    : inner_(std::move(inner)), journal_(std::move(journal)) {}

std::string RecordingBackend::chat(const ChatRequest& request) {
    auto response = inner_->chat(request);
    journal_->record_chat(request, response);
    return response;
}

Vector RecordingBackend::embed_text(std::string_view text) {
    auto v = inner_->embed_text(text);
    journal_->record_embedding(text, v);
    return v;
}

BackendInfo RecordingBackend::info() const {
    auto i = inner_->info();
    i.kind = "recording:" + i.kind;
    return i;
}

}  // namespace mmem
