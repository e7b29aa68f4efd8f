#include "cine/fourier.hpp"

namespace cine::detail {

void require_finite_spectrum(bool finite, const char* what) {
  if (!finite) throw std::invalid_argument(std::string(what) + ": input contains non-finite values");
}

}  // namespace cine::detail
