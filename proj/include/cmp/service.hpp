#pragma once

#include <memory>
#include <string>

#include "cmp/annotate.hpp"
#include "cmp/model.hpp"

namespace cmp {

struct ServiceConfig {
  int max_image_side = 512;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Transport-independent request handling. JSON bodies carry images as base64
// PNG, flow as base64 .flo, and masks as base64 single-channel PNG. Failures
// come back as {"error": {"code", "message", "field"}}.
class AnnotateService {
 public:
  // `model` may be null; model-backed endpoints then answer 503.
  AnnotateService(std::shared_ptr<const CmpModel> model, ServiceConfig config = {});

  HttpReply handle(const std::string& method, const std::string& path, const std::string& body);

  const ServiceConfig& config() const noexcept { return config_; }

 private:
  HttpReply propagate(const std::string& body);
  HttpReply generate_frame(const std::string& body);
  HttpReply put_session(const std::string& id, const std::string& body);
  HttpReply get_session(const std::string& id);
  HttpReply healthz() const;

  std::shared_ptr<const CmpModel> model_;
  ServiceConfig config_;
  SessionStore sessions_;
};

// Blocking HTTP front end over an AnnotateService.
class HttpServer {
 public:
  explicit HttpServer(AnnotateService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Serves until stop() is called from another thread.
  void run();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cmp
