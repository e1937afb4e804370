#include <stdio.h>
#include <string.h>
#include "mimt.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "line %d: %s\n", __LINE__, #cond); return 1; } } while (0)

int main(void) {
    size_t delays[8] = {0, 1, 2, 3, 4, 5, 6, 7};
    uint16_t patch[32], delayed[88], back[32];
    for (int i = 0; i < 32; i++) patch[i] = (uint16_t)i;

    CHECK(mimt_delayed_len(delays, 8, 4) == 11);
    CHECK(mimt_delay_apply(patch, 4, 8, delays, delayed, 88) == MIMT_STATUS_OK);
    CHECK(delayed[1] == MIMT_EMPTY);
    CHECK(mimt_delay_remove(delayed, 11, 8, delays, 4, back, 32) == MIMT_STATUS_OK);
    CHECK(memcmp(patch, back, sizeof patch) == 0);
    CHECK(mimt_delay_apply(patch, 4, 8, delays, delayed, 10) == MIMT_STATUS_BUFFER_TOO_SMALL);
    CHECK(mimt_last_error() != NULL);

    size_t sizes[8] = {1024, 1024, 128, 128, 128, 128, 128, 128};
    CHECK(mimt_bitrate_bps(25.0, sizes, 8) == 1550.0);

    MimtRvq *rvq = NULL;
    CHECK(mimt_rvq_load("/nonexistent", &rvq) == MIMT_STATUS_IO);
    CHECK(rvq == NULL);
    mimt_rvq_free(NULL);

    printf("ok %s\n", mimt_version());
    return 0;
}
