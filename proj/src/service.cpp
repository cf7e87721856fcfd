#include "cmp/service.hpp"

#include <atomic>
#include <cmath>
#include <regex>

#include "httplib.h"
#include "json.hpp"

#include "cmp/error.hpp"

namespace cmp {

using nlohmann::json;

namespace {

// A client error tied to a request field.
class RequestError : public Error {
 public:
  RequestError(int status, std::string code, std::string field, const std::string& message)
      : Error(std::move(code), message), status_(status), field_(std::move(field)) {}

  int status() const noexcept { return status_; }
  const std::string& field() const noexcept { return field_; }

 private:
  int status_;
  std::string field_;
};

HttpReply json_reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpReply error_reply(int status, const std::string& code, const std::string& message, const std::string& field = "") {
  json err{{"code", code}, {"message", message}};
  if (!field.empty()) err["field"] = field;
  return json_reply(status, {{"error", err}});
}

std::string b64(std::span<const std::uint8_t> bytes) { return base64_encode(bytes); }

json parse_body(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw RequestError(400, "malformed_json", "body", std::string("request body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw RequestError(400, "malformed_request", "body", "request body must be a JSON object");
  return j;
}

const json& require(const json& j, const std::string& field) {
  if (!j.contains(field)) throw RequestError(400, "missing_field", field, "missing field '" + field + "'");
  return j.at(field);
}

int int_field(const json& j, const std::string& key, const std::string& field) {
  const json& v = require(j, key);
  if (!v.is_number_integer()) throw RequestError(400, "invalid_field", field, "'" + field + "' must be an integer");
  return v.get<int>();
}

float float_field(const json& j, const std::string& key, const std::string& field) {
  const json& v = require(j, key);
  if (!v.is_number()) throw RequestError(400, "invalid_field", field, "'" + field + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw RequestError(400, "invalid_field", field, "'" + field + "' must be finite");
  return static_cast<float>(d);
}

RgbImage image_field(const json& j, const std::string& field, int max_side) {
  const json& v = require(j, field);
  if (!v.is_string()) throw RequestError(400, "invalid_field", field, "'" + field + "' must be a base64 PNG string");
  RgbImage image;
  try {
    image = decode_png(base64_decode(v.get<std::string>()));
  } catch (const Error& e) {
    throw RequestError(400, "invalid_image", field, e.what());
  }
  if (image.width() > max_side || image.height() > max_side) {
    throw RequestError(413, "image_too_large", field,
                       "image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                           ", limit is " + std::to_string(max_side) + " per side");
  }
  return image;
}

void check_bounds(int x, int y, const RgbImage& image, const std::string& field) {
  if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) {
    throw RequestError(400, "out_of_bounds", field,
                       "point (" + std::to_string(x) + ", " + std::to_string(y) + ") lies outside the " +
                           std::to_string(image.width()) + "x" + std::to_string(image.height()) + " image");
  }
}

std::vector<Arrow> arrows_field(const json& j, const RgbImage& image) {
  std::vector<Arrow> arrows;
  if (!j.contains("arrows")) return arrows;
  const json& list = j.at("arrows");
  if (!list.is_array()) throw RequestError(400, "invalid_field", "arrows", "'arrows' must be an array");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string field = "arrows[" + std::to_string(i) + "]";
    const json& a = list[i];
    if (!a.is_object()) throw RequestError(400, "invalid_field", field, "'" + field + "' must be an object");
    Arrow arrow{int_field(a, "x", field + ".x"), int_field(a, "y", field + ".y"), float_field(a, "u", field + ".u"),
                float_field(a, "v", field + ".v")};
    check_bounds(arrow.x, arrow.y, image, field);
    for (std::size_t k = 0; k < arrows.size(); ++k) {
      if (arrows[k].x == arrow.x && arrows[k].y == arrow.y) {
        throw RequestError(400, "duplicate_point", field, "'" + field + "' repeats the pixel of an earlier arrow");
      }
    }
    arrows.push_back(arrow);
  }
  return arrows;
}

std::vector<Pixel> points_field(const json& j, const std::string& key, const RgbImage& image) {
  std::vector<Pixel> points;
  if (!j.contains(key)) return points;
  const json& list = j.at(key);
  if (!list.is_array()) throw RequestError(400, "invalid_field", key, "'" + key + "' must be an array");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string field = key + "[" + std::to_string(i) + "]";
    const json& p = list[i];
    if (!p.is_object()) throw RequestError(400, "invalid_field", field, "'" + field + "' must be an object");
    Pixel px{int_field(p, "x", field + ".x"), int_field(p, "y", field + ".y")};
    check_bounds(px.x, px.y, image, field);
    points.push_back(px);
  }
  return points;
}

json points_json(std::span<const Pixel> points) {
  json out = json::array();
  for (const Pixel& p : points) out.push_back({{"x", p.x}, {"y", p.y}});
  return out;
}

json session_json(const AnnotationSession& s, const CmpModel& model) {
  return {{"id", s.id},
          {"width", s.image.width()},
          {"height", s.image.height()},
          {"positives", points_json(s.positives)},
          {"negatives", points_json(s.negatives)},
          {"params",
           {{"directions", s.params.directions},
            {"magnitude", s.params.resolved_magnitude(model)},
            {"threshold", s.params.threshold}}},
          {"mask", b64(encode_mask_png(s.mask))},
          {"mask_area", s.mask.count()}};
}

const std::regex& session_route() {
  static const std::regex re("^/v1/session/([A-Za-z0-9_.-]{1,128})$");
  return re;
}

}  // namespace

AnnotateService::AnnotateService(std::shared_ptr<const CmpModel> model, ServiceConfig config)
    : model_(std::move(model)), config_(config) {
  if (config_.max_image_side < 1) throw InvalidArgument("max_image_side must be >= 1");
}

HttpReply AnnotateService::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (path == "/v1/healthz") {
      if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      return healthz();
    }
    const bool model_route = path == "/v1/propagate" || path == "/v1/generate-frame" ||
                             std::regex_match(path, session_route());
    if (!model_route) return error_reply(404, "not_found", "no route for " + path);
    if (!model_) return error_reply(503, "model_unavailable", "no model is loaded");
    if (path == "/v1/propagate") {
      if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
      return propagate(body);
    }
    if (path == "/v1/generate-frame") {
      if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
      return generate_frame(body);
    }
    std::smatch m;
    std::regex_match(path, m, session_route());
    const std::string id = m[1].str();
    if (method == "PUT") return put_session(id, body);
    if (method == "GET") return get_session(id);
    return error_reply(405, "method_not_allowed", "use PUT or GET");
  } catch (const RequestError& e) {
    return error_reply(e.status(), e.code(), e.what(), e.field());
  } catch (const Error& e) {
    return error_reply(400, e.code(), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal_error", e.what());
  }
}

HttpReply AnnotateService::healthz() const {
  json body{{"status", "ok"}, {"model_loaded", static_cast<bool>(model_)}};
  if (model_) {
    body["arch"] = model_->arch();
    body["iteration"] = model_->iteration();
  }
  return json_reply(200, body);
}

HttpReply AnnotateService::propagate(const std::string& body) {
  const json req = parse_body(body);
  const RgbImage image = image_field(req, "image", config_.max_image_side);
  const std::vector<Arrow> arrows = arrows_field(req, image);
  const PropagateResult r = cmp::propagate(*model_, image, arrows);
  return json_reply(200, {{"width", image.width()},
                          {"height", image.height()},
                          {"flow", b64(write_flo(r.flow))},
                          {"color", b64(encode_png(r.color))}});
}

HttpReply AnnotateService::generate_frame(const std::string& body) {
  const json req = parse_body(body);
  const RgbImage image = image_field(req, "image", config_.max_image_side);
  const std::vector<Arrow> arrows = arrows_field(req, image);
  const FlowField flow = predict_flow(*model_, image, arrows_to_guidance(arrows));
  const RgbImage frame = warp_image(image, flow);
  return json_reply(200, {{"width", image.width()},
                          {"height", image.height()},
                          {"image", b64(encode_png(frame))},
                          {"flow", b64(write_flo(flow))}});
}

HttpReply AnnotateService::put_session(const std::string& id, const std::string& body) {
  const json req = parse_body(body);
  std::optional<RgbImage> image;
  RgbImage bounds;
  if (req.contains("image")) {
    image = image_field(req, "image", config_.max_image_side);
    bounds = *image;
  } else if (auto existing = sessions_.get(id)) {
    bounds = existing->image;
  } else {
    throw RequestError(400, "missing_field", "image", "a new session needs 'image'");
  }
  std::vector<Pixel> positives = points_field(req, "positives", bounds);
  std::vector<Pixel> negatives = points_field(req, "negatives", bounds);

  AnnotationParams params;
  if (req.contains("directions")) params.directions = int_field(req, "directions", "directions");
  if (req.contains("magnitude")) params.magnitude = float_field(req, "magnitude", "magnitude");
  if (req.contains("threshold")) params.threshold = float_field(req, "threshold", "threshold");
  try {
    params.validate();
  } catch (const Error& e) {
    throw RequestError(400, "invalid_field", "params", e.what());
  }
  const AnnotationSession s =
      sessions_.put(*model_, id, std::move(image), std::move(positives), std::move(negatives), params);
  return json_reply(200, session_json(s, *model_));
}

HttpReply AnnotateService::get_session(const std::string& id) {
  const auto s = sessions_.get(id);
  if (!s) return error_reply(404, "session_not_found", "no session '" + id + "'", "id");
  return json_reply(200, session_json(*s, *model_));
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  AnnotateService& service;
  httplib::Server server;
  std::atomic<bool> serving{false};

  explicit Impl(AnnotateService& s) : service(s) {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const HttpReply reply = service.handle(req.method, req.path, req.body);
      res.status = reply.status;
      res.set_content(reply.body, reply.content_type);
    };
    server.Get(".*", forward);
    server.Post(".*", forward);
    server.Put(".*", forward);
    server.Delete(".*", forward);
    server.set_payload_max_length(64u << 20);
  }
};

HttpServer::HttpServer(AnnotateService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void HttpServer::run() {
  impl_->serving = true;
  impl_->server.listen_after_bind();
  impl_->serving = false;
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace cmp
