#pragma once

#include <stdexcept>
#include <string>

namespace locallaw {

struct invalid_parameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// z outside the configured spectral domain
struct domain_error : std::domain_error {
    using std::domain_error::domain_error;
};

// eta = 0 inside the support, where no branch of the transform is defined
struct branch_undefined : std::domain_error {
    using std::domain_error::domain_error;
};

struct singular_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct resource_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct precondition_error : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace locallaw
