#include "vsa/service.hpp"

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <cstdio>

namespace vsa {

WorkerPool::WorkerPool(unsigned workers, std::size_t queue_limit) : limit_(queue_limit) {
    for (unsigned i = 0; i < std::max(1u, workers); ++i) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
}

bool WorkerPool::submit(std::function<void()> job) {
    {
        std::lock_guard lock(mutex_);
        if (stopping_ || queue_.size() >= limit_) return false;
        queue_.push_back(std::move(job));
    }
    cv_.notify_one();
    return true;
}

void WorkerPool::run() {
    while (true) {
        std::function<void()> job;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        job();
    }
}

MonitoringService::MonitoringService(ServiceOptions options)
    : options_(std::move(options)), threshold_(options_.threshold), pool_(options_.whatif_workers, options_.whatif_queue) {
    if (!(threshold_ > 0.0 && threshold_ < 2.0)) throw ValidationError("threshold must lie in (0, 2)");
}

MonitoringService::~MonitoringService() { stop(); }

void MonitoringService::publish(Snapshot snapshot) {
    auto ptr = std::make_shared<const Snapshot>(std::move(snapshot));
    {
        std::lock_guard lock(mutex_);
        if (!snapshots_.empty() && ptr->id <= snapshots_.back()->id)
            throw ValidationError("snapshot ids must increase");
        snapshots_.push_back(std::move(ptr));
        if (snapshots_.size() > options_.history_limit) snapshots_.erase(snapshots_.begin());
    }
    published_.notify_all();
}

std::shared_ptr<const Snapshot> MonitoringService::latest() const {
    std::lock_guard lock(mutex_);
    return snapshots_.empty() ? nullptr : snapshots_.back();
}

std::shared_ptr<const Snapshot> MonitoringService::find(std::size_t id) const {
    std::lock_guard lock(mutex_);
    for (const auto& s : snapshots_)
        if (s->id == id) return s;
    return nullptr;
}

std::vector<std::shared_ptr<const Snapshot>> MonitoringService::history(std::size_t from) const {
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<const Snapshot>> out;
    for (const auto& s : snapshots_)
        if (s->id >= from) out.push_back(s);
    return out;
}

double MonitoringService::threshold() const {
    std::lock_guard lock(mutex_);
    return threshold_;
}

void MonitoringService::set_threshold(double value) {
    if (!(value > 0.0 && value < 2.0)) throw ValidationError("threshold must lie in (0, 2)");
    std::lock_guard lock(mutex_);
    threshold_ = value;
}

MonitoringService::WhatIf MonitoringService::whatif(BranchId branch, std::optional<std::size_t> snapshot) {
    auto snap = snapshot ? find(*snapshot) : latest();
    if (!snap) throw NotFoundError(snapshot ? "unknown snapshot " + std::to_string(*snapshot) : "no snapshot published yet");
    if (branch >= snap->model.branches().size() || !snap->model.branches()[branch].in_service)
        throw ValidationError("unknown or open branch " + std::to_string(branch));

    std::shared_future<ContingencyVerdict> fut;
    bool cached = false;
    {
        std::lock_guard lock(mutex_);
        if (stopped_) throw BusyError("service is stopping");
        const Key key{snap->id, branch};
        if (auto it = cache_.find(key); it != cache_.end()) {
            fut = it->second;
            cached = true;
        } else {
            auto task = std::make_shared<std::packaged_task<ContingencyVerdict()>>([snap, branch, opts = options_.screening] {
                return assess_contingency(snap->model, snap->state, branch, snap->dir, opts);
            });
            fut = task->get_future().share();
            if (!pool_.submit([task] { (*task)(); })) throw BusyError("what-if queue is full");
            cache_.emplace(key, fut);
        }
    }
    return {fut.get(), cached};
}

std::vector<ContingencyVerdict> MonitoringService::ranking(std::optional<std::size_t> snapshot) {
    auto snap = snapshot ? find(*snapshot) : latest();
    if (!snap) throw NotFoundError(snapshot ? "unknown snapshot " + std::to_string(*snapshot) : "no snapshot published yet");
    {
        std::lock_guard lock(mutex_);
        if (auto it = rankings_.find(snap->id); it != rankings_.end()) return it->second;
    }
    const auto branches = all_branches(snap->model);
    auto verdicts =
        rank_contingencies(screen_contingencies(snap->model, snap->state, branches, snap->dir, options_.screening));
    std::lock_guard lock(mutex_);
    for (const auto& v : verdicts) {
        const Key key{snap->id, v.branch};
        if (!cache_.count(key)) {
            std::promise<ContingencyVerdict> p;
            p.set_value(v);
            cache_.emplace(key, p.get_future().share());
        }
    }
    return rankings_.emplace(snap->id, std::move(verdicts)).first->second;
}

std::shared_ptr<const Snapshot> MonitoringService::wait_newer(std::optional<std::size_t> after,
                                                              std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    const auto ready = [&] {
        return stopped_ || (!snapshots_.empty() && (!after || snapshots_.back()->id > *after));
    };
    published_.wait_for(lock, timeout, ready);
    if (stopped_ || snapshots_.empty() || (after && snapshots_.back()->id <= *after)) return nullptr;
    return snapshots_.back();
}

void MonitoringService::stop() {
    {
        std::lock_guard lock(mutex_);
        stopped_ = true;
    }
    published_.notify_all();
}

bool MonitoringService::stopped() const {
    std::lock_guard lock(mutex_);
    return stopped_;
}

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                Json extra = Json::object()) {
    extra["error"] = code;
    extra["message"] = message;
    send_json(res, status, extra);
}

Json snapshot_json(const Snapshot& s, double threshold) {
    Json j{{"snapshot", s.id},
           {"k", std::isfinite(s.k) ? Json(s.k) : Json(nullptr)},
           {"threshold", threshold},
           {"alarm", s.report.max_wvsi() > threshold},
           {"report", report_summary(s.report)}};
    return j;
}

Json critical_json(const Snapshot& s) {
    Json items = Json::array();
    for (const auto& g : s.report.critical.items) {
        Json item = g;
        const auto& gen = s.model.generators()[g.gen];
        item["qmax"] = gen.qmax;
        item["qmin"] = gen.qmin;
        item["rpr"] = nullptr;
        for (const auto& m : s.report.rpr_models)
            if (m.gen == g.gen) item["rpr"] = m.latest_rpr;
        items.push_back(std::move(item));
    }
    return Json{{"snapshot", s.id},
                {"q_total", s.report.q_total},
                {"band", s.report.critical.threshold},
                {"w1", s.report.w1},
                {"generators", std::move(items)}};
}

std::optional<std::size_t> parse_index(const std::string& text) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
    try {
        return static_cast<std::size_t>(std::stoull(text));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

void MonitoringService::mount(httplib::Server& server) {
    server.Get("/api/report/latest", [this](const httplib::Request&, httplib::Response& res) {
        auto s = latest();
        if (!s) return send_error(res, 404, "not_found", "no snapshot published yet");
        send_json(res, 200, snapshot_json(*s, threshold()));
    });

    server.Get("/api/report/history", [this](const httplib::Request& req, httplib::Response& res) {
        std::size_t from = 0;
        if (req.has_param("from")) {
            auto f = parse_index(req.get_param_value("from"));
            if (!f) return send_error(res, 400, "invalid", "'from' must be a snapshot id");
            from = *f;
        }
        const double th = threshold();
        Json reports = Json::array();
        for (const auto& s : history(from)) reports.push_back(snapshot_json(*s, th));
        send_json(res, 200, Json{{"from", from}, {"reports", std::move(reports)}});
    });

    server.Get("/api/generators/critical", [this](const httplib::Request&, httplib::Response& res) {
        auto s = latest();
        if (!s) return send_error(res, 404, "not_found", "no snapshot published yet");
        send_json(res, 200, critical_json(*s));
    });

    server.Post("/api/whatif", [this](const httplib::Request& req, httplib::Response& res) {
        Json body;
        try {
            body = Json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return send_error(res, 400, "invalid", "body must be JSON");
        }
        if (!body.is_object() || !body.contains("branch"))
            return send_error(res, 400, "invalid", "body needs a 'branch' field");
        std::optional<std::size_t> snap_id;
        if (body.contains("snapshot") && !body["snapshot"].is_null()) {
            if (!body["snapshot"].is_number_unsigned()) return send_error(res, 400, "invalid", "'snapshot' must be an id");
            snap_id = body["snapshot"].get<std::size_t>();
        }
        auto snap = snap_id ? find(*snap_id) : latest();
        if (!snap)
            return send_error(res, 404, "not_found", snap_id ? "unknown snapshot" : "no snapshot published yet");
        std::optional<BranchId> branch;
        const auto& b = body["branch"];
        if (b.is_string()) branch = snap->model.find_branch(b.get<std::string>());
        else if (b.is_number_unsigned()) branch = snap->model.find_branch(std::to_string(b.get<std::size_t>()));
        if (!branch) return send_error(res, 400, "unknown_branch", "unknown branch " + b.dump());
        try {
            auto r = whatif(*branch, snap->id);
            if (r.verdict.outcome == VerdictOutcome::Islanding) {
                const auto isl = islanded_buses(apply_outage(snap->model, *branch, 1.0));
                Json ids = Json::array();
                for (auto i : isl) ids.push_back(snap->model.buses()[i].id);
                return send_error(res, 422, "islanding", r.verdict.detail,
                                  Json{{"branch", r.verdict.label}, {"snapshot", snap->id}, {"buses", ids}});
            }
            send_json(res, 200,
                      Json{{"snapshot", snap->id}, {"cached", r.cached}, {"verdict", verdict_json(r.verdict, threshold())}});
        } catch (const BusyError& e) {
            send_error(res, 503, "busy", e.what());
        } catch (const NotFoundError& e) {
            send_error(res, 404, "not_found", e.what());
        } catch (const ValidationError& e) {
            send_error(res, 400, "invalid", e.what());
        }
    });

    server.Get("/api/contingencies/ranking", [this](const httplib::Request& req, httplib::Response& res) {
        std::optional<std::size_t> snap_id;
        if (req.has_param("snapshot")) {
            snap_id = parse_index(req.get_param_value("snapshot"));
            if (!snap_id) return send_error(res, 400, "invalid", "'snapshot' must be an id");
        }
        try {
            const auto verdicts = ranking(snap_id);
            const double th = threshold();
            Json arr = Json::array();
            for (const auto& v : verdicts) arr.push_back(verdict_json(v, th));
            const auto id = snap_id ? *snap_id : latest()->id;
            send_json(res, 200, Json{{"snapshot", id}, {"threshold", th}, {"verdicts", std::move(arr)}});
        } catch (const NotFoundError& e) {
            send_error(res, 404, "not_found", e.what());
        }
    });

    server.Put("/api/config/threshold", [this](const httplib::Request& req, httplib::Response& res) {
        Json body;
        try {
            body = Json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return send_error(res, 400, "invalid", "body must be JSON");
        }
        if (!body.is_object() || !body.contains("threshold") || !body["threshold"].is_number())
            return send_error(res, 400, "invalid", "body needs a numeric 'threshold'");
        try {
            set_threshold(body["threshold"].get<double>());
        } catch (const ValidationError& e) {
            return send_error(res, 400, "invalid", e.what());
        }
        send_json(res, 200, Json{{"threshold", threshold()}});
    });

    server.Get("/api/stream", [this](const httplib::Request&, httplib::Response& res) {
        auto last = std::make_shared<std::optional<std::size_t>>();
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) {
            auto s = wait_newer(*last, std::chrono::milliseconds(1000));
            if (stopped()) {
                sink.done();
                return false;
            }
            std::string chunk;
            if (s) {
                *last = s->id;
                chunk = "event: report\nid: " + std::to_string(s->id) + "\ndata: " + snapshot_json(*s, threshold()).dump() +
                        "\n\n";
            } else {
                chunk = ": keep-alive\n\n";
            }
            return sink.write(chunk.data(), chunk.size());
        });
    });
}

void serve(const ScenarioConfig& config, int port, const std::function<void(int)>& on_listen) {
    config.validate();
    const auto base = load_case_file(config.case_path);
    ServiceOptions opts;
    opts.threshold = config.screening_threshold.value_or(default_screening_threshold(base));
    opts.screening.threshold = opts.threshold;
    opts.screening.assessment.threshold = config.band_threshold;
    opts.screening.assessment.alpha_fraction = config.alpha_fraction;
    MonitoringService service(opts);
    httplib::Server server;
    service.mount(server);

    const int bound = port == 0 ? server.bind_to_any_port("0.0.0.0") : (server.bind_to_port("0.0.0.0", port) ? port : -1);
    if (bound < 0) throw ValidationError("cannot bind port " + std::to_string(port));

    std::jthread replay([&](std::stop_token stop) {
        const auto period = std::chrono::duration<double>(1.0 / config.replay_rate_hz);
        auto replay_cfg = config;
        replay_cfg.contingencies.clear();
        try {
            run_scenario(replay_cfg, [&](const Snapshot& s) {
                if (stop.stop_requested()) return;
                service.publish(s);
                std::this_thread::sleep_for(period);
            });
        } catch (const std::exception& e) {
            std::fprintf(stderr, "replay stopped: %s\n", e.what());
        }
    });
    if (on_listen) on_listen(bound);
    server.listen_after_bind();
    service.stop();
}

}  // namespace vsa
