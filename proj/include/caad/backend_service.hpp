#pragma once

#include "caad/backends.hpp"

namespace httplib {
class Server;
}

namespace caad {

/// Serves `backends` over the /v1 wire protocol (plus GET /v1/health) on `server`.
/// Either backend may be null; its endpoints then answer 404.
void mount_backend_routes(httplib::Server& server, Backends backends);

}  // namespace caad
