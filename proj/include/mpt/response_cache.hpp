#pragma once

#include <atomic>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "mpt/backends.hpp"

namespace mpt {

struct CacheRecord {
    std::string key;
    std::string model;
    nlohmann::json request;
    std::string response_text;
    std::string timestamp;
};

/// Append-only key -> response store backed by a JSON-lines file.
/// Lines that fail to parse are skipped on load and counted.
class ResponseStore {
public:
    /// In-memory store when `path` is empty.
    explicit ResponseStore(std::filesystem::path path = {});

    std::optional<CacheRecord> find(const std::string& key) const;
    void put(CacheRecord record);

    std::size_t size() const;
    std::size_t skipped_lines() const { return skipped_lines_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, CacheRecord> records_;
    std::size_t skipped_lines_ = 0;
};

struct CacheFileStats {
    std::size_t lines = 0;
    std::size_t unique_keys = 0;
    std::size_t duplicate_lines = 0;
    std::size_t malformed_lines = 0;
    std::uintmax_t bytes = 0;
};

CacheFileStats inspect_cache_file(const std::filesystem::path& path);

/// Rewrites the file keeping the first record per key and dropping malformed lines.
CacheFileStats compact_cache_file(const std::filesystem::path& path);

/// Record/replay wrapper. Hits return the stored text with from_cache = true;
/// misses go to `inner` and are persisted. With no inner backend every miss
/// throws Error{CacheMiss}, which makes replay runs provably offline.
/// Concurrent misses on the same key share one underlying call.
class CachingBackend : public ChatBackend {
public:
    CachingBackend(std::shared_ptr<ResponseStore> store, std::shared_ptr<ChatBackend> inner);
    CachingBackend(std::shared_ptr<ResponseStore> store, std::shared_ptr<ChatBackend> inner, std::string backend_id,
                   std::string model);

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return backend_id_; }
    std::string model() const override { return model_; }

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }

private:
    std::shared_ptr<ResponseStore> store_;
    std::shared_ptr<ChatBackend> inner_;
    std::string backend_id_;
    std::string model_;
    std::mutex inflight_mutex_;
    std::map<std::string, std::shared_future<std::string>> inflight_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

}  // namespace mpt
