#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "vsa/runner.hpp"

namespace httplib {
class Server;
}

namespace vsa {

/// Fixed-size worker pool with a bounded queue.
class WorkerPool {
  public:
    WorkerPool(unsigned workers, std::size_t queue_limit);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    /// False when the queue is full.
    bool submit(std::function<void()> job);

  private:
    void run();

    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> queue_;
    std::size_t limit_;
    bool stopping_ = false;
    std::vector<std::thread> threads_;
};

class BusyError : public Error {
  public:
    using Error::Error;
};

class NotFoundError : public Error {
  public:
    using Error::Error;
};

struct ServiceOptions {
    double threshold = 0.75;
    std::size_t history_limit = 10000;
    unsigned whatif_workers = 2;
    std::size_t whatif_queue = 64;
    ScreeningOptions screening;  // threshold field ignored; the live threshold applies
};

/// Monitoring service state: published snapshots, live threshold and the what-if cache.
/// Snapshots are immutable once published; readers always see one whole snapshot.
class MonitoringService {
  public:
    explicit MonitoringService(ServiceOptions options = {});
    ~MonitoringService();

    void publish(Snapshot snapshot);

    std::shared_ptr<const Snapshot> latest() const;
    std::shared_ptr<const Snapshot> find(std::size_t id) const;
    std::vector<std::shared_ptr<const Snapshot>> history(std::size_t from) const;

    double threshold() const;
    /// Throws ValidationError outside (0, 2).
    void set_threshold(double value);

    struct WhatIf {
        ContingencyVerdict verdict;  // critical flag as computed at the time; payloads re-apply the threshold
        bool cached = false;
    };
    /// Evaluates a contingency on a published snapshot (latest when unset) through the worker pool.
    /// Throws NotFoundError, ValidationError, BusyError.
    WhatIf whatif(BranchId branch, std::optional<std::size_t> snapshot = std::nullopt);

    /// All branches of the snapshot, ranked. Cached per snapshot.
    std::vector<ContingencyVerdict> ranking(std::optional<std::size_t> snapshot = std::nullopt);

    /// Blocks until a snapshot newer than `after` is published, the timeout expires or stop() is called.
    std::shared_ptr<const Snapshot> wait_newer(std::optional<std::size_t> after, std::chrono::milliseconds timeout) const;

    /// Registers the HTTP routes on `server`.
    void mount(httplib::Server& server);

    /// Wakes stream waiters and refuses new work.
    void stop();
    bool stopped() const;

  private:
    using Key = std::pair<std::size_t, BranchId>;

    ServiceOptions options_;
    mutable std::mutex mutex_;
    mutable std::condition_variable published_;
    std::vector<std::shared_ptr<const Snapshot>> snapshots_;
    double threshold_;
    bool stopped_ = false;
    std::map<Key, std::shared_future<ContingencyVerdict>> cache_;
    std::map<std::size_t, std::vector<ContingencyVerdict>> rankings_;
    WorkerPool pool_;
};

/// Runs the scenario, publishing each snapshot at the configured replay rate, and serves the API on
/// `port` until the process is stopped. Port 0 picks a free port; `on_listen` receives it.
void serve(const ScenarioConfig& config, int port, const std::function<void(int)>& on_listen = {});

}  // namespace vsa
