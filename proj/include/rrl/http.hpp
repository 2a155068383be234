#pragma once
// HTTP front end of the session store. Every body is JSON; errors are {code, message}.
#include <string>

#include "httplib.h"
#include "rrl/service.hpp"

namespace rrl {

/// Routes:
///   POST /sessions                    create from a config (may be empty)
///   GET  /sessions/{id}               summary
///   GET  /sessions/{id}/query         outstanding query with its display payload
///   POST /sessions/{id}/feedback      {query_id, choice, timestamps?, client_timing?}
///   GET  /sessions/{id}/belief        entropy, posterior mean, top-k, fitted betas
///   GET  /sessions/{id}/export        full persisted document
///   GET  /sessions/{id}/holdout       hold-one-out calibration analysis
/// cors_origin is sent as Access-Control-Allow-Origin on every response.
void mount_routes(httplib::Server& server, SessionStore& store, const std::string& cors_origin = "*");

/// Blocks serving on host:port until the server is stopped.
bool serve(SessionStore& store, const std::string& host, int port, const std::string& cors_origin = "*");

}  // namespace rrl
