#pragma once

#include "statuskt/autodiff/adam.hpp"
#include "statuskt/autodiff/gradcheck.hpp"
#include "statuskt/autodiff/losses.hpp"
#include "statuskt/autodiff/ops.hpp"
#include "statuskt/autodiff/parameters.hpp"
#include "statuskt/autodiff/tensor.hpp"
