#pragma once

#include <exception>
#include <mutex>

namespace semloc {

// Captures the first exception thrown inside an OpenMP region so it can be rethrown outside it.
class ExceptionCollector {
  public:
    template <typename F> void run(F &&f) {
        try {
            f();
        } catch (...) {
            std::lock_guard<std::mutex> lock(mutex_);
            if (!error_) error_ = std::current_exception();
        }
    }

    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
    }

  private:
    std::mutex mutex_;
    std::exception_ptr error_;
};

} // namespace semloc
