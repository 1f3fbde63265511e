#pragma once

#include <doctest.h>

#include "xom/error.hpp"

// Checks that `expr` throws xom::Error of the given kind.
#define CHECK_XOM_ERROR(expr, expected)                                                                       \
    do {                                                                                                      \
        bool thrown_ = false;                                                                                 \
        try {                                                                                                 \
            (void)(expr);                                                                                     \
        } catch (const xom::Error &e_) {                                                                      \
            thrown_ = true;                                                                                   \
            CHECK_MESSAGE(e_.kind() == (expected), std::string(e_.what()));                                             \
        }                                                                                                     \
        CHECK_MESSAGE(thrown_, "expected xom::Error " #expected);                                             \
    } while (0)
