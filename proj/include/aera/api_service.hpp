#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "aera/gateway.hpp"
#include "aera/orchestrator.hpp"
#include "aera/store.hpp"

namespace aera {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string database_url = "aera.db";
  std::string providers_path;  // empty: built-in mock registry
  std::string tagger_model;    // empty: first registered model
  std::chrono::seconds token_ttl{24 * 3600};
  std::size_t max_in_flight = 16;
  std::size_t http_threads = 32;
};

/// AERA_BIND (host:port), AERA_DATABASE_URL, AERA_PROVIDERS, AERA_TAGGER_MODEL.
ServiceConfig service_config_from_env(ServiceConfig base = {});

/// Gateway with every provider of the configured registry registered.
std::shared_ptr<Gateway> make_gateway(const ServiceConfig& config);

/// REST + server-sent-events front of the store, orchestrator and gateway.
/// Unfinished jobs found in the database are resumed on construction.
class ApiService {
 public:
  ApiService(ServiceConfig config, std::shared_ptr<Gateway> gateway);
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  Store& store();
  Orchestrator& orchestrator();
  Gateway& gateway();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aera
