#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <semaphore>
#include <string>

#include "attnrank/score.hpp"
#include "httplib.h"
#include "json.hpp"

namespace attnrank {

struct RerankRequest {
    std::string query;
    std::vector<std::string> candidates;
    std::optional<std::string> memory_prefix;
    std::optional<int> top_k;
    bool calibrate = false;

    static RerankRequest from_json(const nlohmann::json& j) {
        RerankRequest r;
        if (!j.contains("query") || !j.at("query").is_string())
            throw ArgumentError("field 'query': required string");
        r.query = j.at("query");
        if (!j.contains("candidates") || !j.at("candidates").is_array())
            throw ArgumentError("field 'candidates': required array of strings");
        for (const auto& c : j.at("candidates")) {
            if (!c.is_string())
                throw ArgumentError("field 'candidates': entries must be strings");
            r.candidates.push_back(c.get<std::string>());
        }
        if (r.candidates.size() < 2)
            throw ArgumentError("field 'candidates': need at least 2 entries");
        if (j.contains("memory_prefix") && !j.at("memory_prefix").is_null())
            r.memory_prefix = j.at("memory_prefix").get<std::string>();
        if (j.contains("top_k") && !j.at("top_k").is_null()) {
            r.top_k = j.at("top_k").get<int>();
            if (*r.top_k < 1 || *r.top_k > static_cast<int>(r.candidates.size()))
                throw ArgumentError("field 'top_k': must be in [1, candidate count]");
        }
        r.calibrate = j.value("calibrate", false);
        return r;
    }
};

// Stateless rerank service: a pure function of (request, model, head set).
// A bounded concurrency budget rejects requests over capacity instead of
// queueing unboundedly.
template <typename Scalar>
class RerankService {
  public:
    RerankService(std::shared_ptr<const Reranker<Scalar>> reranker,
                  std::string model_id, std::string head_set_id,
                  int max_concurrency = 4)
        : reranker_(std::move(reranker)),
          model_id_(std::move(model_id)),
          head_set_id_(std::move(head_set_id)),
          slots_(max_concurrency) {}

    // Library-level handling, shared by the HTTP route and tests.
    nlohmann::json handle(const RerankRequest& req) const {
        ListwiseInstance inst;
        inst.instance_id = "request";
        inst.query = req.query;
        for (size_t i = 0; i < req.candidates.size(); ++i) {
            inst.candidates.push_back(
                {"r" + std::to_string(i), req.candidates[i], 0});
            inst.labels.push_back(false);
        }
        inst.memory_prefix = req.memory_prefix;

        RerankOptions opts;
        opts.calibrate = req.calibrate;
        auto t0 = std::chrono::steady_clock::now();
        ScoreVector sv = reranker_->rerank(inst, opts);
        auto t1 = std::chrono::steady_clock::now();

        nlohmann::json out;
        out["scores"] = sv.scores;
        std::vector<int> ranking = sv.ranking;
        if (req.top_k) ranking.resize(*req.top_k);
        out["ranking"] = ranking;
        out["model_id"] = model_id_;
        out["head_set_id"] = head_set_id_;
        out["latency_ms"] =
            std::chrono::duration<double, std::milli>(t1 - t0).count();
        return out;
    }

    void install_routes(httplib::Server& server) {
        server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"status\":\"ready\"}", "application/json");
        });
        server.Post("/rerank", [this](const httplib::Request& req,
                                      httplib::Response& res) {
            if (!slots_.try_acquire()) {
                res.status = 503;
                res.set_content("{\"error\":\"over capacity\"}", "application/json");
                return;
            }
            struct Release {
                std::counting_semaphore<>& s;
                ~Release() { s.release(); }
            } release{slots_};
            nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded()) {
                res.status = 400;
                res.set_content("{\"error\":\"malformed JSON body\"}",
                                "application/json");
                return;
            }
            try {
                RerankRequest rr = RerankRequest::from_json(body);
                res.set_content(handle(rr).dump(), "application/json");
            } catch (const LengthError& e) {
                res.status = 413;
                nlohmann::json err{{"error", "prompt overflow"}, {"detail", e.what()}};
                res.set_content(err.dump(), "application/json");
            } catch (const ArgumentError& e) {
                res.status = 400;
                nlohmann::json err{{"error", e.what()}};
                res.set_content(err.dump(), "application/json");
            } catch (const std::exception& e) {
                unsigned long id = ++error_counter_;
                fprintf(stderr, "internal error #%lu: %s\n", id, e.what());
                res.status = 500;
                nlohmann::json err{{"error", "internal"},
                                   {"id", std::to_string(id)}};
                res.set_content(err.dump(), "application/json");
            }
        });
    }

  private:
    std::shared_ptr<const Reranker<Scalar>> reranker_;
    std::string model_id_;
    std::string head_set_id_;
    mutable std::counting_semaphore<> slots_;
    mutable std::atomic<unsigned long> error_counter_{0};
};

}  // namespace attnrank
