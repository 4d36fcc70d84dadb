/** Shared test fixture: one 320x240 grayscale PNG with a gradient and
three soft disks, embedded so tests need no files outside the repo. */

export const FIXTURE_DIMS: [number, number] = [320, 240];

export const FIXTURE_PNG_BASE64 =
  "iVBORw0KGgoAAAANSUhEUgAAAUAAAADwCAAAAABURuK3AAAI8klEQVR42u2dXXbbOAyFNThcwF3C7H91WMI89NRjW5REEv+y" +
  "/NDGiUKCF98lQCWt/vl3672wjb7Grwy/1GRQkk5l8rKR2mRQSqlKofmpOADh89MDoAGBP6/KxPz02FI2Pz0AyuanHwHQLCtU" +
  "GYAtwbZATxMtG5QeWyq3MQ+Ac5fSA2BoIx0Zf46s0HJUhVSx9Ao9AMrmpx8A0HR+qgpglm2BzAGEzVKRRGq6PX/GEZAxVtju" +
  "CSBkBKIOf9YhUM3g87SLzZAr1FIF2QhEWVvOzN+sAEQ1VRanbzYzJSgehuUOXQERnMzYHmZ5yKY+VRr4DMtdT0AEZzISQAgu" +
  "b6qTpaLPrtxJBES8eggeDl0BEbysqCZaPG9TCgm5bGk4FroCCqsVktnScdaWjAlHfaAyKMkBhGsKkGwraHfF7yoyrbhJCCCc" +
  "YUAwf1Am8FxTjoTYqeNvoohw/h4TKrpqje5bXpm/DUd1qR+Ov49zAYj+x1hJd9OK8coxnAdAnAx4Him6Aq4CiKmV4Sgw9zKO" +
  "y7ZsJtmkkschEfpXYXN2MK6vmTlwtVUAsSBBJ7fwd3B/BbwIYVP1wccKeUBCbFEA9v5+iw08OGhbAxADJPb344/PYosDsNtH" +
  "8KmCFkc5nK7uSEM2Lh+jAO43phMFIRAQV7JhrvpCV5XVsbDPM2YZJBXs4Ow8KZrv+gF4/XnWJMLAwjjZBi825AR3HLDTixcY" +
  "pIWAcKDfR6OHt3dAQgBxBBnGziziRnonJ046ZwTIJGouhsckKYAYO2bA0cHD4702wc8dEDOzks6KcHl8Qx4Acb6RT3x1k/9u" +
  "DA6qMetWELs73/gMFPwV859PiBppXHZS6B7q+FNBJSUVSzAOm+iJ8UghPvR3Qcw0i/6nOKWBSQ4gzoW9+YssMwktBJGAVaUi" +
  "gn4v/1Vsv06WXttfSgIxk2d8d4XwpmN2Co608A5AGGllIDz/FY+FWpLVOnFwvMwF4I5FNhbwuicc61pz9DB/EHz7c4FFEii2" +
  "cG5K8fqy7sb8ko8DLYyzTzg10dISsmBjn/83JuOL91qtlBFKL5IBgB/23X04J6Pzr/hmaqkZJzZ23QO5lGsv9jpWtfA9Hfy/" +
  "giyHgezA40pMbkeK+rUxPPJpNgRwKVruVBHXIsLofbjTinOZ/SNaWWyk3BYoSwY7xyrllBTt+m4BdkQvtHkgaQTck+t7N2EH" +
  "AOdhZQ0Jm1JbgG2kK83GIyOUwOsDOGfTjdUhJC3VLAqJRx/PQg2bQg3GgR24f4LK0MTs44S+gAObxp+3r1M5Tg6eSQE8cguM" +
  "Ldxvk9/u7HJHvzI3HWZibbL87+zLevsgSihNwhRd1VneSgLo2MbwWT/At9fvWEBcEXV1+pAePfEjBL6XWz5usLLwpx6H4HbW" +
  "q3IM3BmajzsYQHEbg5mqwO55v5WFLwVaOSwh3JsyATEZ9JlGFfGDIYEHpeFIQr6xfYVF5PtszPvEeR6DFe7t6QmIxbDf7mv4" +
  "g6eoIEwJ/NIMBnse6liYxPHn2eMiItF4vrB+mUCwgpASOBtnGgjdS77W84XvZeOp9VPC1MNSQdYFcO35wpy5YXYOhPJFjmAb" +
  "QyggyiQ/PA5s6k+0UQhdpYlmt4K39nxhTk8hOyQQCjcTDmJHBgV9grB5KBVzrINdmlN0BUS8hNYKsmoC7R6LtiYhkhhhOFKy" +
  "jP8eJ7soArcUP8zkybAgEzBB9azCIDwITHGXhh0tHA4gfBRkeQCQ7YF4XOxSRLLkhQ0jbWW56kp0sITvHx0q/gS0lQeQd29w" +
  "raAwAnQFRLjVlMzJnhFSZQCPj2q7r7DVrkiFd0CeEZeNUk2mqFgm5fJOAftauFoTzbMSs1oISNsHqrd2PPbGuYjYOBgG+tnY" +
  "GF0B73o4Y+tNkQwBNBuVja5diZQMVclxtGVbHFs9APn8C/BNeKt+G2En6+4gp/vb5/A7ysERwO9/pnfwHQZlpBkuNbAos9sT" +
  "E+kGAHJI/7ImIErwNyarDhVUrYeZLcqH17BOxJRAFZGD2fMch66AN+hhAl9khIpXYeexL7KhgL8FICs72KqNSQGgy01pqt5E" +
  "O+YcmxuBP5QVegCUrZ/uDSCb74b0AOh6Fi574JNHAqGAxesCrKKkexsM5iNRaNAo7PlJAfHjSMLPwq6bJcK9TtUARDJ9qTSA" +
  "a79QpaotFQNQmCH9hVARM66MAnGXPPBlSmjLuSmC3UHFATwZCCImR0OlpKrMTNKdFNjUHCwlMF0TjROxOpfAkooWBSCUJ+aB" +
  "wWEweysIYPcZp3jdNMV0/LAVMCOA3afEYhg7xeMMVQRwW/mX0UYLoeTr1z/DzXaSEAqYq4k+L72nIRlFR0UBnK4OsAFQs4gg" +
  "IA8cHlBLp4qWhPDxcosAEPYSjttU5uArAZMD+NVCH0YNuyW14gC+jchDbQt0AbwQsAKA18GarqIlWqjHdNoA6jxjPTOrMA6T" +
  "bg4gxqvLWqitpC0Xw7KIslVQ5W8gbHjUiy0ilpslet3K0kSTBh4LtSUHsC8Dr6TJZj0tXJCVy89RxCqRK6G2EFuqDNxT0b+Z" +
  "bpkBhNqAC5YeHJkSAwjTkZRGp7wAIjQT8LNw9jsOMI2a0qqCEvopEGi0WcI0DVCbnpICiFwY52hjkCYLegCKny+c4X/Dmx4D" +
  "NQlElj0AmqG2ewLoliy0OwIIYSDws3BGAOEYMroCZj9aiPTRXlzzQsVnX4WvAdAVEHeFz2RxLdHiZGtEjMYtXw9jmCDoT9pu" +
  "ASCcIT0jsCCACIoX2+Z1R9o0K4gKVVpEUAo/IwDNni/slRVt/abXTzltmZ8/j+cL2wOIaAP4FBEkGNgsBkoVEeroBz8CUYc/" +
  "CAks1UQjx+yUaaHYYq9dyQlVTH98sOgKWKmHQRahKZMty2iNroC4n9Omhl2bn0qqkmgLpjS2LAQg/AgMBxBuBKKkgeI3a8oC" +
  "YPSlkBL4ALi2/izPF64KoO3zhXF/AE2fL/wLAJoWkZ/YLKlaEx0NIPwI/I1qTcXqQjqv0G2X6uSVYs8XzrdZ03bbG4E+81Nx" +
  "AMLnpwdA2fz0qCJtYx5bii6lB0DZ6z9Beq1pSTEmWwAAAABJRU5ErkJggg==";

export function fixtureBytes(): Uint8Array {
  return Uint8Array.from(Buffer.from(FIXTURE_PNG_BASE64, "base64"));
}

/** Width and height from a PNG's IHDR chunk (big-endian at offsets 16 and 20). */
export function pngDims(data: Uint8Array): [number, number] {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  return [view.getUint32(16), view.getUint32(20)];
}
