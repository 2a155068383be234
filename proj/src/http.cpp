#include "rrl/http.hpp"

namespace rrl {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

Json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty() && allow_empty) return Json();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ServiceError(400, "invalid_json", e.what());
  }
}

// Runs a handler and maps exceptions onto {code, message} bodies.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, f(req));
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, "invalid_request", e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, "invalid_request", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal_error", e.what());
    }
  };
}

}  // namespace

void mount_routes(httplib::Server& server, SessionStore& store, const std::string& cors_origin) {
  server.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/sessions", guarded([&](const httplib::Request& req) {
                return store.create(parse_body(req, true));
              }));
  server.Get(R"(/sessions/([^/]+))", guarded([&](const httplib::Request& req) {
               return store.summary(req.matches[1]);
             }));
  server.Get(R"(/sessions/([^/]+)/query)", guarded([&](const httplib::Request& req) {
               return store.next_query(req.matches[1]);
             }));
  server.Post(R"(/sessions/([^/]+)/feedback)", guarded([&](const httplib::Request& req) {
                return store.submit(req.matches[1], parse_body(req, false));
              }));
  server.Get(R"(/sessions/([^/]+)/belief)", guarded([&](const httplib::Request& req) {
               return store.belief(req.matches[1]);
             }));
  server.Get(R"(/sessions/([^/]+)/export)", guarded([&](const httplib::Request& req) {
               return store.export_session(req.matches[1]);
             }));
  server.Get(R"(/sessions/([^/]+)/holdout)", guarded([&](const httplib::Request& req) {
               return store.holdout(req.matches[1]);
             }));
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "not_found", "no such route");
  });
}

bool serve(SessionStore& store, const std::string& host, int port, const std::string& cors_origin) {
  httplib::Server server;
  mount_routes(server, store, cors_origin);
  return server.listen(host, port);
}

}  // namespace rrl
