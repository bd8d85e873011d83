#include "mpt/response_cache.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <vector>

namespace mpt {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json record_to_json(const CacheRecord& r) {
    return json{{"key", r.key},
                {"model", r.model},
                {"request", r.request},
                {"response_text", r.response_text},
                {"timestamp", r.timestamp}};
}

std::optional<CacheRecord> parse_record(const std::string& line) {
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j.contains("response_text")) {
        return std::nullopt;
    }
    try {
        return CacheRecord{j.at("key").get<std::string>(), j.value("model", std::string{}),
                           j.value("request", json::object()), j.at("response_text").get<std::string>(),
                           j.value("timestamp", std::string{})};
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

}  // namespace

ResponseStore::ResponseStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty()) return;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto record = parse_record(line);
        if (!record) {
            ++skipped_lines_;
            continue;
        }
        records_.try_emplace(record->key, std::move(*record));
    }
}

std::optional<CacheRecord> ResponseStore::find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void ResponseStore::put(CacheRecord record) {
    std::lock_guard lock(mutex_);
    if (records_.contains(record.key)) return;
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app);
        out << record_to_json(record).dump() << '\n';
        out.flush();
        if (!out) throw Error(ErrorCode::IoError, "cannot append to cache file " + path_.string());
    }
    records_.emplace(record.key, std::move(record));
}

std::size_t ResponseStore::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

CacheFileStats inspect_cache_file(const std::filesystem::path& path) {
    CacheFileStats stats;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open cache file " + path.string());
    std::set<std::string> keys;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++stats.lines;
        auto record = parse_record(line);
        if (!record) {
            ++stats.malformed_lines;
        } else if (!keys.insert(record->key).second) {
            ++stats.duplicate_lines;
        }
    }
    stats.unique_keys = keys.size();
    stats.bytes = std::filesystem::file_size(path);
    return stats;
}

CacheFileStats compact_cache_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open cache file " + path.string());
    std::set<std::string> keys;
    std::vector<std::string> kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto record = parse_record(line);
        if (record && keys.insert(record->key).second) kept.push_back(line);
    }
    in.close();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& l : kept) out << l << '\n';
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
    return inspect_cache_file(path);
}

CachingBackend::CachingBackend(std::shared_ptr<ResponseStore> store, std::shared_ptr<ChatBackend> inner)
    : CachingBackend(store, inner, inner ? inner->id() : std::string{}, inner ? inner->model() : std::string{}) {}

CachingBackend::CachingBackend(std::shared_ptr<ResponseStore> store, std::shared_ptr<ChatBackend> inner,
                               std::string backend_id, std::string model)
    : store_(std::move(store)), inner_(std::move(inner)), backend_id_(std::move(backend_id)), model_(std::move(model)) {
    if (!store_) throw Error(ErrorCode::InvalidArgument, "caching backend needs a store");
}

ModelResponse CachingBackend::complete(const Conversation& conversation) {
    validate_conversation(conversation);
    const std::string key = cache_key(conversation, backend_id_, model_);
    if (auto hit = store_->find(key)) {
        ++hits_;
        return ModelResponse{hit->response_text, backend_id_, 0, true};
    }
    if (!inner_) throw Error(ErrorCode::CacheMiss, "no cached response for key " + key);

    std::promise<std::string> promise;
    std::shared_future<std::string> shared;
    bool owner = false;
    {
        std::lock_guard lock(inflight_mutex_);
        auto it = inflight_.find(key);
        if (it != inflight_.end()) {
            shared = it->second;
        } else {
            shared = promise.get_future().share();
            inflight_.emplace(key, shared);
            owner = true;
        }
    }
    if (!owner) {
        std::string text = shared.get();
        ++hits_;
        return ModelResponse{std::move(text), backend_id_, 0, true};
    }

    ++misses_;
    auto release = [&] {
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key);
    };
    try {
        ModelResponse response = inner_->complete(conversation);
        json request{{"messages", to_json(conversation.messages)},
                     {"decoding", to_json(conversation.decoding)},
                     {"sample_index", conversation.sample_index},
                     {"backend_id", backend_id_}};
        store_->put(CacheRecord{key, model_, std::move(request), response.text, utc_timestamp()});
        promise.set_value(response.text);
        release();
        response.from_cache = false;
        return response;
    } catch (...) {
        promise.set_exception(std::current_exception());
        release();
        throw;
    }
}

}  // namespace mpt
