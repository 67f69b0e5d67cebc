#pragma once

#include <cstdint>

namespace httplib {
class Server;
}

namespace sida {

// Registers mock /extract, /segment and /inpaint routes implementing the
// wire contracts with the deterministic in-process mocks. Used by tests and
// by anyone who wants a stand-in backend on localhost.
void register_mock_routes(httplib::Server& server, std::uint64_t seed);

}  // namespace sida
