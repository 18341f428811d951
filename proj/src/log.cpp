#include "rfvoice/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace rfvoice::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
bool g_verbose = false;

}  // namespace

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  return std::exchange(g_sink, std::move(sink));
}

void warn(std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(message);
    return;
  }
  std::cerr << "warning: " << message << '\n';
}

void info(std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_verbose) std::cerr << message << '\n';
}

void set_verbose(bool on) {
  std::lock_guard lock(g_mutex);
  g_verbose = on;
}

}  // namespace rfvoice::log
