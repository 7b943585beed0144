#pragma once

#include "mgp/analysis.hpp"
#include "mgp/checkpoint.hpp"
#include "mgp/error.hpp"
#include "mgp/gradcheck.hpp"
#include "mgp/image_io.hpp"
#include "mgp/inversion.hpp"
#include "mgp/model.hpp"
#include "mgp/objective.hpp"
#include "mgp/rng.hpp"
#include "mgp/tensor.hpp"
#include "mgp/tensor_file.hpp"
