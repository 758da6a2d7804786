#pragma once

#include "maffsrn/autodiff.hpp"
#include "maffsrn/blocks.hpp"
#include "maffsrn/complexity.hpp"
#include "maffsrn/core.hpp"
#include "maffsrn/gradcheck.hpp"
#include "maffsrn/imaging.hpp"
#include "maffsrn/model.hpp"
#include "maffsrn/ops.hpp"
#include "maffsrn/png_io.hpp"
#include "maffsrn/resample.hpp"
#include "maffsrn/tensor.hpp"
#include "maffsrn/training.hpp"
